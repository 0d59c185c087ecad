#pragma once

#include <cmath>
#include <functional>

#include "tbgc/error.hpp"
#include "tbgc/tensor.hpp"

namespace tbgc {

// Central-difference gradient of a scalar function, one probe pair per
// element. Uses only forward evaluations, so it is independent of the tape
// backward path it is used to check.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h = 1e-5) {
  if (!(h > 0.0)) throw Error("finite_diff_grad requires h > 0");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double xi = x[i];
    probe[i] = xi + h;
    const double fp = f(probe);
    probe[i] = xi - h;
    const double fm = f(probe);
    probe[i] = xi;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Norm-relative disagreement between an analytic gradient and its
// finite-difference estimate. Gradients whose norms both sit below the zero
// floor count as agreement: central differences cannot resolve anything near
// ulp(f)/h, so comparisons down there would only measure rounding noise.
inline double gradient_rel_err(const Tensor& analytic, const Tensor& reference,
                               double zero_floor = 1e-8) {
  if (!analytic.same_shape(reference)) throw ShapeMismatch("gradient_rel_err shapes differ");
  double diff2 = 0.0, ana2 = 0.0, ref2 = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double d = analytic[i] - reference[i];
    diff2 += d * d;
    ana2 += analytic[i] * analytic[i];
    ref2 += reference[i] * reference[i];
  }
  if (std::sqrt(ana2) <= zero_floor && std::sqrt(ref2) <= zero_floor) return 0.0;
  return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12);
}

} // namespace tbgc
