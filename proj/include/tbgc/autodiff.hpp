#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tbgc/error.hpp"
#include "tbgc/tensor.hpp"

namespace tbgc {

// Counts live op-output buffers (forward intermediates held by tapes).
// Leaves and constants are inputs, not activations, and are not counted.
// Thread-local: a tape is confined to one thread from construction to release.
class ActivationCounter {
public:
  static long live() { return live_; }
  static long peak() { return peak_; }
  static void reset_peak() { peak_ = live_; }

  static void on_alloc() {
    ++live_;
    peak_ = std::max(peak_, live_);
  }
  static void on_free(long n) { live_ -= n; }

private:
  inline static thread_local long live_ = 0;
  inline static thread_local long peak_ = 0;
};

using GradMap = std::map<std::string, Tensor>;

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; invalid once the
// owning tape has been released.
class Var {
public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }

private:
  friend class Tape;
  Var(Tape* t, std::size_t idx) : tape_(t), idx_(idx) {}
  Tape* tape_ = nullptr;
  std::size_t idx_ = 0;
};

// Record of one forward pass. Ops append nodes in execution order, each with
// its backward rule; backward() replays them in reverse and then releases
// every record, so a tape can drive exactly one backward pass. The tape must
// stay on the thread that created it.
class Tape {
public:
  using GradSlots = std::vector<std::optional<Tensor>>;
  using BackFn = std::function<void(Tape&, const Tensor& upstream, GradSlots&)>;

  Tape() = default;
  ~Tape() { release_records(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Named differentiable leaf. Re-registering a name returns the existing
  // slot so parameters can be requested lazily by several ops.
  Var leaf(const std::string& name, const Tensor& value) {
    check_open("leaf");
    auto it = leaf_index_.find(name);
    if (it != leaf_index_.end()) return Var(this, it->second);
    Node n;
    n.value = value;
    n.requires_grad = true;
    n.leaf_name = name;
    nodes_.push_back(std::move(n));
    leaf_index_.emplace(name, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
  }

  // Non-differentiable input (batch data, masks, targets).
  Var constant(Tensor value) {
    check_open("constant");
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  // Appends an op result. Internal to the op builders below.
  Var record(Tensor value, bool requires_grad, BackFn back) {
    check_open("record");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.is_op = true;
    if (requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    ++op_nodes_;
    ActivationCounter::on_alloc();
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value_of(const Var& v) const {
    if (v.tape_ != this) throw Error("var belongs to another tape");
    if (released_) throw TapeReleased("value_of");
    return nodes_[v.idx_].value;
  }

  bool requires_grad(const Var& v) const { return nodes_[v.idx_].requires_grad; }
  std::size_t index_of(const Var& v) const { return v.idx_; }
  const Tensor& value_at(std::size_t idx) const { return nodes_[idx].value; }

  std::size_t op_count() const { return op_nodes_; }
  bool released() const { return released_; }

  void add_grad(GradSlots& grads, std::size_t idx, Tensor g) {
    if (!nodes_[idx].requires_grad) return;
    if (!grads[idx]) {
      grads[idx] = std::move(g);
      return;
    }
    Tensor& acc = *grads[idx];
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
  }

  // Reverse sweep from a scalar loss. Consumes the tape: all op records and
  // intermediate values are freed before returning, so the && qualifier makes
  // single-use part of the signature.
  GradMap backward(const Var& loss) && {
    if (released_) throw TapeReleased("backward");
    if (loss.tape_ != this) throw Error("loss var belongs to another tape");
    if (op_nodes_ == 0) throw EmptyTape("no operations recorded");
    const Node& ln = nodes_[loss.idx_];
    if (ln.value.numel() != 1) throw NonScalarLoss("loss has shape " + ln.value.shape_string());

    GradSlots grads(nodes_.size());
    grads[loss.idx_] = Tensor::full(ln.value.shape(), 1.0);

    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!grads[i] || !n.requires_grad || !n.back) continue;
      n.back(*this, *grads[i], grads);
    }

    GradMap out;
    for (const auto& [name, idx] : leaf_index_) {
      if (grads[idx]) out.emplace(name, std::move(*grads[idx]));
    }
    release_records();
    return out;
  }

private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    bool is_op = false;
    std::string leaf_name;
    BackFn back;
  };

  void check_open(const char* what) const {
    if (released_) throw TapeReleased(what);
  }

  void release_records() {
    if (released_) return;
    ActivationCounter::on_free(static_cast<long>(op_nodes_));
    nodes_.clear();
    nodes_.shrink_to_fit();
    leaf_index_.clear();
    op_nodes_ = 0;
    released_ = true;
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> leaf_index_;
  std::size_t op_nodes_ = 0;
  bool released_ = false;
};

inline const Tensor& Var::value() const { return tape_->value_of(*this); }

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw Error("operands recorded on different tapes");
  return a.tape();
}

} // namespace detail

// ---- differentiable ops ---------------------------------------------------

inline Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false) {
  Tape& t = detail::same_tape(a, b);
  Tensor c = gemm(a.value(), b.value(), trans_a, trans_b);
  const std::size_t ia = t.index_of(a), ib = t.index_of(b);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(c), rg, [ia, ib, trans_a, trans_b](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
    const Tensor& av = tp.value_at(ia);
    const Tensor& bv = tp.value_at(ib);
    if (!trans_a && !trans_b) {
      tp.add_grad(g, ia, gemm(up, bv, false, true));
      tp.add_grad(g, ib, gemm(av, up, true, false));
    } else if (!trans_a && trans_b) {
      tp.add_grad(g, ia, gemm(up, bv, false, false));
      tp.add_grad(g, ib, gemm(up, av, true, false));
    } else if (trans_a && !trans_b) {
      tp.add_grad(g, ia, gemm(bv, up, false, true));
      tp.add_grad(g, ib, gemm(av, up, false, false));
    } else {
      tp.add_grad(g, ia, gemm(bv, up, true, true));
      tp.add_grad(g, ib, gemm(up, av, true, true));
    }
  });
}

// Elementwise add; also accepts a rank-1 (or 1-row) bias broadcast over the
// rows of a rank-2 left operand.
inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t ia = t.index_of(a), ib = t.index_of(b);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);

  if (av.same_shape(bv)) {
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return t.record(std::move(out), rg, [ia, ib](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
      tp.add_grad(g, ia, up);
      tp.add_grad(g, ib, up);
    });
  }

  const bool bias_like = av.rank() == 2 && bv.numel() == av.cols() &&
                         (bv.rank() == 1 || (bv.rank() == 2 && bv.shape()[0] == 1));
  if (!bias_like) {
    throw ShapeMismatch("add " + av.shape_string() + " + " + bv.shape_string());
  }
  Tensor out = av;
  const std::size_t rows = av.rows(), cols = av.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return t.record(std::move(out), rg, [ia, ib, rows, cols](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
    tp.add_grad(g, ia, up);
    Tensor db(tp.value_at(ib).shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) db[c] += up[r * cols + c];
    tp.add_grad(g, ib, std::move(db));
  });
}

inline Var scalar_mul(const Var& a, double c) {
  Tape& t = a.tape();
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  const std::size_t ia = t.index_of(a);
  return t.record(std::move(out), t.requires_grad(a), [ia, c](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
    Tensor da = up;
    for (std::size_t i = 0; i < da.numel(); ++i) da[i] *= c;
    tp.add_grad(g, ia, std::move(da));
  });
}

inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) throw ShapeMismatch("mul " + av.shape_string() + " * " + bv.shape_string());
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const std::size_t ia = t.index_of(a), ib = t.index_of(b);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [ia, ib](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
    const Tensor& av2 = tp.value_at(ia);
    const Tensor& bv2 = tp.value_at(ib);
    Tensor da = up, db = up;
    for (std::size_t i = 0; i < up.numel(); ++i) {
      da[i] *= bv2[i];
      db[i] *= av2[i];
    }
    tp.add_grad(g, ia, std::move(da));
    tp.add_grad(g, ib, std::move(db));
  });
}

inline Var sub(const Var& a, const Var& b) { return add(a, scalar_mul(b, -1.0)); }

// x <= 0 maps to 0, including the kink at exactly 0 (subgradient 0 there).
inline Var relu(const Var& a) {
  Tape& t = a.tape();
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  const std::size_t ia = t.index_of(a);
  return t.record(std::move(out), t.requires_grad(a), [ia](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
    const Tensor& av = tp.value_at(ia);
    Tensor da = up;
    for (std::size_t i = 0; i < da.numel(); ++i) {
      if (!(av[i] > 0.0)) da[i] = 0.0;
    }
    tp.add_grad(g, ia, std::move(da));
  });
}

inline Var sigmoid(const Var& a) {
  Tape& t = a.tape();
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  const std::size_t ia = t.index_of(a);
  return t.record(std::move(out), t.requires_grad(a), [ia](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
    const Tensor& av = tp.value_at(ia);
    Tensor da = up;
    for (std::size_t i = 0; i < da.numel(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-av[i]));
      da[i] *= s * (1.0 - s);
    }
    tp.add_grad(g, ia, std::move(da));
  });
}

// Elementwise square root; inputs must be nonnegative.
inline Var sqrt(const Var& a) {
  Tape& t = a.tape();
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (out[i] < 0.0) throw Error("sqrt of negative value");
    out[i] = std::sqrt(out[i]);
  }
  const std::size_t ia = t.index_of(a);
  return t.record(std::move(out), t.requires_grad(a), [ia](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
    const Tensor& av = tp.value_at(ia);
    Tensor da = up;
    for (std::size_t i = 0; i < da.numel(); ++i) da[i] *= 0.5 / std::sqrt(av[i]);
    tp.add_grad(g, ia, std::move(da));
  });
}

// Rows of a rank-2 input scaled to unit L2 norm.
inline Var l2_normalize_rows(const Var& a, double eps = 1e-12) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeMismatch("l2_normalize_rows expects rank-2 input");
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out = av;
  for (std::size_t r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < cols; ++c) n2 += av.at(r, c) * av.at(r, c);
    const double n = std::sqrt(n2);
    if (n < eps) throw DegenerateFeature("row " + std::to_string(r) + " has norm " + std::to_string(n));
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= n;
  }
  const std::size_t ia = t.index_of(a);
  return t.record(std::move(out), t.requires_grad(a), [ia, rows, cols](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
    const Tensor& av2 = tp.value_at(ia);
    Tensor da({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
      double n2 = 0.0;
      for (std::size_t c = 0; c < cols; ++c) n2 += av2.at(r, c) * av2.at(r, c);
      const double n = std::sqrt(n2);
      double updoty = 0.0;
      for (std::size_t c = 0; c < cols; ++c) updoty += up.at(r, c) * av2.at(r, c) / n;
      for (std::size_t c = 0; c < cols; ++c) {
        da.at(r, c) = (up.at(r, c) - updoty * av2.at(r, c) / n) / n;
      }
    }
    tp.add_grad(g, ia, std::move(da));
  });
}

// Concatenation along the leading axis; trailing extents must agree.
inline Var concat(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != bv.rank() || av.rank() == 0) {
    throw ShapeMismatch("concat rank " + std::to_string(av.rank()) + " vs " + std::to_string(bv.rank()));
  }
  for (std::size_t d = 1; d < av.rank(); ++d) {
    if (av.shape()[d] != bv.shape()[d]) throw ShapeMismatch("concat trailing extents differ");
  }
  std::vector<std::size_t> shape = av.shape();
  shape[0] += bv.shape()[0];
  Tensor out(shape);
  std::copy(av.data(), av.data() + av.numel(), out.data());
  std::copy(bv.data(), bv.data() + bv.numel(), out.data() + av.numel());
  const std::size_t ia = t.index_of(a), ib = t.index_of(b);
  const std::size_t na = av.numel();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [ia, ib, na](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
    const Tensor& av2 = tp.value_at(ia);
    const Tensor& bv2 = tp.value_at(ib);
    Tensor da(av2.shape()), db(bv2.shape());
    std::copy(up.data(), up.data() + na, da.data());
    std::copy(up.data() + na, up.data() + up.numel(), db.data());
    tp.add_grad(g, ia, std::move(da));
    tp.add_grad(g, ib, std::move(db));
  });
}

inline Var reshape(const Var& a, std::vector<std::size_t> shape) {
  Tape& t = a.tape();
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = t.index_of(a);
  return t.record(std::move(out), t.requires_grad(a), [ia](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
    tp.add_grad(g, ia, up.reshaped(tp.value_at(ia).shape()));
  });
}

inline Var sum(const Var& a) {
  Tape& t = a.tape();
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().numel(); ++i) s += a.value()[i];
  const std::size_t ia = t.index_of(a);
  return t.record(Tensor::scalar(s), t.requires_grad(a), [ia](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
    tp.add_grad(g, ia, Tensor::full(tp.value_at(ia).shape(), up[0]));
  });
}

inline Var mean(const Var& a) {
  Tape& t = a.tape();
  const std::size_t n = a.value().numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a.value()[i];
  const std::size_t ia = t.index_of(a);
  return t.record(Tensor::scalar(s / static_cast<double>(n)), t.requires_grad(a),
                  [ia, n](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
                    tp.add_grad(g, ia, Tensor::full(tp.value_at(ia).shape(), up[0] / static_cast<double>(n)));
                  });
}

// Mean over the batch of -log softmax(logits)[target]. Softmax is recomputed
// in the backward rule instead of being cached across the pass.
inline Var softmax_cross_entropy(const Var& logits, const std::vector<std::size_t>& targets) {
  Tape& t = logits.tape();
  const Tensor& lv = logits.value();
  if (lv.rank() != 2) throw ShapeMismatch("softmax_cross_entropy expects rank-2 logits");
  const std::size_t n = lv.rows(), classes = lv.cols();
  if (targets.size() != n) {
    throw ShapeMismatch("targets length " + std::to_string(targets.size()) + " vs batch " + std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= classes) {
      throw IndexOutOfRange("target " + std::to_string(targets[i]) + " with " + std::to_string(classes) + " classes");
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = lv.at(i, 0);
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, lv.at(i, c));
    double lse = 0.0;
    for (std::size_t c = 0; c < classes; ++c) lse += std::exp(lv.at(i, c) - mx);
    total += mx + std::log(lse) - lv.at(i, targets[i]);
  }
  const std::size_t il = t.index_of(logits);
  std::vector<std::size_t> tgt = targets;
  return t.record(Tensor::scalar(total / static_cast<double>(n)), t.requires_grad(logits),
                  [il, tgt = std::move(tgt), n, classes](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
                    const Tensor& lv2 = tp.value_at(il);
                    Tensor dl({n, classes});
                    const double w = up[0] / static_cast<double>(n);
                    for (std::size_t i = 0; i < n; ++i) {
                      double mx = lv2.at(i, 0);
                      for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, lv2.at(i, c));
                      double z = 0.0;
                      for (std::size_t c = 0; c < classes; ++c) z += std::exp(lv2.at(i, c) - mx);
                      for (std::size_t c = 0; c < classes; ++c) {
                        const double p = std::exp(lv2.at(i, c) - mx) / z;
                        dl.at(i, c) = w * (p - (c == tgt[i] ? 1.0 : 0.0));
                      }
                    }
                    tp.add_grad(g, il, std::move(dl));
                  });
}

// Huber-style loss against a fixed target, averaged over all elements.
inline Var smooth_l1(const Var& pred, const Tensor& target, double beta = 1.0) {
  Tape& t = pred.tape();
  const Tensor& pv = pred.value();
  if (!pv.same_shape(target)) {
    throw ShapeMismatch("smooth_l1 " + pv.shape_string() + " vs " + target.shape_string());
  }
  const std::size_t n = pv.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pv[i] - target[i];
    const double ad = std::fabs(d);
    total += ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
  }
  const std::size_t ip = t.index_of(pred);
  Tensor tgt = target;
  return t.record(Tensor::scalar(total / static_cast<double>(n)), t.requires_grad(pred),
                  [ip, tgt = std::move(tgt), beta, n](Tape& tp, const Tensor& up, Tape::GradSlots& g) {
                    const Tensor& pv2 = tp.value_at(ip);
                    Tensor dp(pv2.shape());
                    const double w = up[0] / static_cast<double>(n);
                    for (std::size_t i = 0; i < n; ++i) {
                      const double d = pv2[i] - tgt[i];
                      dp[i] = w * (std::fabs(d) < beta ? d / beta : (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)));
                    }
                    tp.add_grad(g, ip, std::move(dp));
                  });
}

// ---- composed helpers ------------------------------------------------------

inline Var shift(const Var& a, double c) {
  return add(a, a.tape().constant(Tensor::full(a.value().shape(), c)));
}

// lo + relu(x - lo) - relu(x - hi), i.e. clamp built from the primitive set.
inline Var clamp(const Var& a, double lo, double hi) {
  Var over_lo = relu(shift(a, -lo));
  Var over_hi = relu(shift(a, -hi));
  return shift(sub(over_lo, over_hi), lo);
}

} // namespace tbgc
