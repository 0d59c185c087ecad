#pragma once

#include <cmath>
#include <map>
#include <string>

#include "tbgc/clip.hpp"
#include "tbgc/param_store.hpp"

namespace tbgc {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment accumulators keyed by parameter name, plus the shared
// step counter. One step per multi-task iteration.
struct OptState {
  struct Slot {
    Tensor m;
    Tensor v;
  };
  std::map<std::string, Slot> slots;
  long step = 0;
};

// Per-group learning rate: backbone parameters train at a fraction of the
// base rate, heads at the base rate.
inline double param_group_lr(const Role& role, double base_lr, double backbone_factor) {
  return role.is_backbone() ? backbone_factor * base_lr : base_lr;
}

// Decoupled-weight-decay Adam over every store parameter. Parameters missing
// from the gradient map update with a zero gradient, so their moments decay
// and only the weight-decay term moves them.
inline void adamw_update(ParamStore& store, const AggregatedGradient& grads, OptState& opt,
                         double lr, double weight_decay, const AdamWConfig& cfg,
                         double backbone_lr_factor = 1.0) {
  check_aligned(grads, store);
  if (lr < 0.0) throw Error("negative learning rate");
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  for (const std::string& name : store.names()) {
    Tensor& p = store.value(name);
    auto slot_it = opt.slots.find(name);
    if (slot_it == opt.slots.end()) {
      slot_it = opt.slots.emplace(name, OptState::Slot{Tensor(p.shape()), Tensor(p.shape())}).first;
    }
    OptState::Slot& slot = slot_it->second;
    if (!slot.m.same_shape(p)) throw AlignmentError("optimizer state shape for '" + name + "'");

    const double group_lr = param_group_lr(store.role(name), lr, backbone_lr_factor);
    auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * gi;
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      p[i] -= group_lr * mhat / (std::sqrt(vhat) + cfg.eps) + group_lr * weight_decay * p[i];
    }
  }
}

} // namespace tbgc
