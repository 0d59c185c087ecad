#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tbgc/param_store.hpp"

namespace tbgc {

// Per-parameter gradients produced by one task's backward pass. Head
// parameters of other tasks are simply absent and read as zero.
struct TaskGradient {
  std::string task;
  GradMap grads;
};

enum class ClipMode { Vanilla, TBGC, TBGCStar };

// Vanilla clip semantics. Literal rescales unconditionally so the output norm
// is exactly the max norm; Clamped only shrinks (min(1, S/norm)), the way most
// frameworks implement clip-by-norm.
enum class VanillaSemantics { Literal, Clamped };

struct ClipConfig {
  ClipMode mode = ClipMode::TBGC;
  double max_norm = 0.1;
  VanillaSemantics vanilla = VanillaSemantics::Literal;
  double zero_eps = 1e-12;
};

inline const char* clip_mode_name(ClipMode m) {
  switch (m) {
    case ClipMode::Vanilla: return "vanilla";
    case ClipMode::TBGC: return "tbgc";
    case ClipMode::TBGCStar: return "tbgc_star";
  }
  return "?";
}

inline ClipMode parse_clip_mode(const std::string& s) {
  if (s == "vanilla") return ClipMode::Vanilla;
  if (s == "tbgc") return ClipMode::TBGC;
  if (s == "tbgc_star" || s == "tbgc*") return ClipMode::TBGCStar;
  throw InvalidConfig("unknown clip mode '" + s + "'");
}

// L2 norm of the whole gradient map flattened into one vector.
inline double grad_norm(const GradMap& g) {
  double s = 0.0;
  for (const auto& [name, t] : g) {
    for (std::size_t i = 0; i < t.numel(); ++i) s += t[i] * t[i];
  }
  return std::sqrt(s);
}

inline double grad_norm(const TaskGradient& g) { return grad_norm(g.grads); }

// L2 norm restricted to backbone-role entries.
inline double backbone_grad_norm(const GradMap& g, const ParamStore& store) {
  check_aligned(g, store);
  double s = 0.0;
  for (const auto& [name, t] : g) {
    if (!store.role(name).is_backbone()) continue;
    for (std::size_t i = 0; i < t.numel(); ++i) s += t[i] * t[i];
  }
  return std::sqrt(s);
}

inline double backbone_grad_norm(const TaskGradient& g, const ParamStore& store) {
  return backbone_grad_norm(g.grads, store);
}

namespace detail {

inline void scale_in_place(GradMap& g, double factor) {
  for (auto& [name, t] : g) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] *= factor;
  }
}

} // namespace detail

// Clip output plus the degenerate-gradient signal. `skipped` means the input
// norm was below the zero epsilon: the gradient passes through untouched and
// the caller records a warning.
struct ClipResult {
  GradMap grads;
  bool skipped = false;
};

// Whole-gradient rescale to max norm. Literal semantics apply the rescale
// unconditionally; Clamped leaves gradients under the cap untouched.
inline ClipResult vanilla_clip(GradMap g, const ClipConfig& cfg) {
  const double norm = grad_norm(g);
  if (norm < cfg.zero_eps) return ClipResult{std::move(g), true};
  if (cfg.vanilla == VanillaSemantics::Clamped && norm <= cfg.max_norm) {
    return ClipResult{std::move(g), false};
  }
  detail::scale_in_place(g, cfg.max_norm / norm);
  return ClipResult{std::move(g), false};
}

// Task-level backbone-oriented clip, two steps as stated: first normalize the
// task gradient to unit L2 norm, then rescale the whole of it so the
// backbone-restricted norm is exactly the max norm. Head entries ride along
// with the same factor.
inline ClipResult tbgc_clip(TaskGradient g, const ParamStore& store, const ClipConfig& cfg) {
  const double bnorm = backbone_grad_norm(g.grads, store);
  if (bnorm < cfg.zero_eps) {
    detail::scale_in_place(g.grads, 0.0);
    return ClipResult{std::move(g.grads), true};
  }
  const double full = grad_norm(g.grads);
  detail::scale_in_place(g.grads, 1.0 / full);
  const double bnorm_unit = backbone_grad_norm(g.grads, store);
  detail::scale_in_place(g.grads, cfg.max_norm / bnorm_unit);
  return ClipResult{std::move(g.grads), false};
}

// Ablation variant: per-task vanilla clip (full-gradient norm to max norm, no
// backbone-restricted rescale).
inline ClipResult tbgc_star_clip(TaskGradient g, const ClipConfig& cfg) {
  return vanilla_clip(std::move(g.grads), cfg);
}

using AggregatedGradient = GradMap;

// Elementwise sum of the per-task gradients, aligned with the full store.
// Parameters no task touched are absent from the result (zero).
inline AggregatedGradient aggregate(const std::vector<TaskGradient>& parts, const ParamStore& store) {
  AggregatedGradient out;
  for (const TaskGradient& part : parts) {
    check_aligned(part.grads, store);
    for (const auto& [name, t] : part.grads) {
      auto it = out.find(name);
      if (it == out.end()) {
        out.emplace(name, t);
      } else {
        Tensor& acc = it->second;
        for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += t[i];
      }
    }
  }
  return out;
}

} // namespace tbgc
