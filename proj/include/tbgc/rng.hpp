#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace tbgc {

// Deterministic random stream built on splitmix64. Explicitly seeded and
// self-contained so that identical seeds produce identical streams on every
// platform and toolchain, which the whole test suite relies on.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; no spare caching so the draw count per
  // call is fixed and streams stay reproducible under reordering.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::size_t index(std::size_t n) { return n == 0 ? 0 : static_cast<std::size_t>(next_u64() % n); }

  // Derives an independent child seed from a path of labels. Used to hand
  // each task/epoch/purpose its own stream.
  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    Rng r(seed);
    std::uint64_t s = r.next_u64();
    for (std::uint64_t p : path) {
      Rng q(s ^ (p * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));
      s = q.next_u64();
    }
    return s;
  }

private:
  std::uint64_t state_;
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  if (v.size() < 2) return;
  for (std::size_t i = v.size() - 1; i > 0; --i) {
    std::size_t j = rng.index(i + 1);
    std::swap(v[i], v[j]);
  }
}

} // namespace tbgc
