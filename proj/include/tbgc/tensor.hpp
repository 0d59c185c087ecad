#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tbgc/error.hpp"

namespace tbgc {

// Dense row-major n-d array of doubles. Plain value semantics: copies are
// deep, moves are cheap, and nothing here is thread-aware.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != data_.size()) {
      throw ShapeMismatch("data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string());
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D accessors. rows() is the leading extent; cols() the product of the
  // rest, so rank-1 tensors behave as single rows where convenient.
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.empty() ? 0 : numel() / shape_[0]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (checked_numel(shape) != numel()) {
      throw ShapeMismatch("reshape to incompatible element count");
    }
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  double scalar_value() const {
    if (numel() != 1) throw ShapeMismatch("scalar_value on tensor with " + std::to_string(numel()) + " elements");
    return data_[0];
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ']';
    return os.str();
  }

private:
  static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeMismatch("zero extent in shape");
      n *= e;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) s += t[i] * t[i];
  return std::sqrt(s);
}

inline double dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw ShapeMismatch("dot over unequal element counts");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

// C = op(A) * op(B) with optional transposes, plain triple loop. Shared by the
// tape's matmul forward and all of its backward rules.
inline Tensor gemm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeMismatch("gemm expects rank-2 operands");
  const std::size_t m = trans_a ? a.shape()[1] : a.shape()[0];
  const std::size_t k = trans_a ? a.shape()[0] : a.shape()[1];
  const std::size_t kb = trans_b ? b.shape()[1] : b.shape()[0];
  const std::size_t n = trans_b ? b.shape()[0] : b.shape()[1];
  if (k != kb) {
    throw ShapeMismatch("gemm inner extents " + std::to_string(k) + " vs " + std::to_string(kb));
  }
  Tensor c({m, n});
  const std::size_t lda = a.shape()[1];
  const std::size_t ldb = b.shape()[1];
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = trans_a ? a[p * lda + i] : a[i * lda + p];
      if (av == 0.0) continue;
      const double* brow = trans_b ? nullptr : &b.data()[p * ldb];
      double* crow = &c.data()[i * n];
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return c;
}

} // namespace tbgc
