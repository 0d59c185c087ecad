#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tbgc/finite_diff.hpp"
#include "tbgc/model.hpp"
#include "tbgc/rng.hpp"

namespace tbgc {

struct GradCheckReport {
  std::string name;
  int instances = 0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace gradcheck_detail {

// Finite differences are meaningless within h of a kink (relu corner,
// smooth-l1 crossover, the arcface cosine clamp), so instance generators
// resample until every nondifferentiable point is at a safe distance.
constexpr double kKinkMargin = 1e-3;

struct Instance {
  ParamStore params;
  std::function<Var(Tape&, const ParamStore&)> loss;
};

inline double check_instance(const Instance& inst, double h) {
  Tape tape;
  Var loss = inst.loss(tape, inst.params);
  GradMap grads = std::move(tape).backward(loss);
  double worst = 0.0;
  for (const std::string& name : inst.params.names()) {
    if (!grads.count(name)) continue;
    auto f = [&](const Tensor& x) {
      ParamStore patched;
      for (const std::string& m : inst.params.names()) {
        patched.add(m, inst.params.role(m), m == name ? x : inst.params.value(m));
      }
      Tape t;
      return inst.loss(t, patched).value().scalar_value();
    };
    Tensor fd = finite_diff_grad(f, inst.params.value(name), h);
    worst = std::max(worst, gradient_rel_err(grads.at(name), fd));
  }
  return worst;
}

inline GradCheckReport run_loss(const std::string& name, int instances, double tol, double h,
                                const std::function<Instance(Rng&)>& make, Rng& rng) {
  GradCheckReport rep;
  rep.name = name;
  rep.tolerance = tol;
  for (int i = 0; i < instances; ++i) {
    Instance inst = make(rng);
    rep.max_rel_err = std::max(rep.max_rel_err, check_instance(inst, h));
    ++rep.instances;
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

// Straight-line forward of the toy model, tracking how close any relu input,
// smooth-l1 residual, or cosine gets to its kink.
struct KinkProbe {
  double min_relu_margin = 1e300;
  double min_feat_norm = 1e300;
  double max_abs_cos = 0.0;
  double min_smooth_l1_margin = 1e300;
};

inline std::vector<double> linear_relu(const std::vector<double>& x, std::size_t n, const Tensor& w,
                                       const Tensor& b, KinkProbe& probe) {
  const std::size_t in = w.shape()[0], out = w.shape()[1];
  std::vector<double> y(n * out, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = x[i * in + k];
      for (std::size_t j = 0; j < out; ++j) y[i * out + j] += xv * w.at(k, j);
    }
    for (std::size_t j = 0; j < out; ++j) {
      const double pre = y[i * out + j] + b[j];
      probe.min_relu_margin = std::min(probe.min_relu_margin, std::fabs(pre));
      y[i * out + j] = pre > 0.0 ? pre : 0.0;
    }
  }
  return y;
}

inline KinkProbe probe_model(const ParamStore& store, const ModelConfig& cfg, const Batch& batch,
                             const std::string& task) {
  KinkProbe probe;
  const std::size_t n = batch.size();
  std::vector<double> cur(batch.images.data(), batch.images.data() + batch.images.numel());
  for (std::size_t l = 0; l <= cfg.backbone.hidden.size(); ++l) {
    cur = linear_relu(cur, n, store.value("backbone.w" + std::to_string(l)),
                      store.value("backbone.b" + std::to_string(l)), probe);
  }
  const std::size_t d = cfg.backbone.feature_dim;
  if (task == kTaskCls) {
    std::vector<double> hidden = linear_relu(cur, n, store.value("cls.mlp.w0"),
                                             store.value("cls.mlp.b0"), probe);
    const Tensor& w1 = store.value("cls.mlp.w1");
    const Tensor& b1 = store.value("cls.mlp.b1");
    std::vector<double> feat(cur); // shortcut connection
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < w1.shape()[0]; ++k) {
        const double hv = hidden[i * w1.shape()[0] + k];
        for (std::size_t j = 0; j < d; ++j) feat[i * d + j] += hv * w1.at(k, j);
      }
      for (std::size_t j = 0; j < d; ++j) feat[i * d + j] += b1[j];
    }
    // feature and weight row norms must stay away from zero, cosines away
    // from the clamp
    const Tensor& wc = store.value("cls.arcface.weight");
    for (std::size_t i = 0; i < n; ++i) {
      double fn = 0;
      for (std::size_t j = 0; j < d; ++j) fn += feat[i * d + j] * feat[i * d + j];
      fn = std::sqrt(fn);
      probe.min_feat_norm = std::min(probe.min_feat_norm, fn);
      for (std::size_t c = 0; c < wc.rows(); ++c) {
        double wn = 0, dp = 0;
        for (std::size_t j = 0; j < d; ++j) {
          wn += wc.at(c, j) * wc.at(c, j);
          dp += wc.at(c, j) * feat[i * d + j];
        }
        wn = std::sqrt(wn);
        probe.min_feat_norm = std::min(probe.min_feat_norm, wn);
        if (fn > 0 && wn > 0) probe.max_abs_cos = std::max(probe.max_abs_cos, std::fabs(dp / (fn * wn)));
      }
    }
  } else if (task == kTaskDet) {
    const Tensor& w = store.value("det.w");
    const Tensor& b = store.value("det.b");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        double v = b[j];
        for (std::size_t k = 0; k < d; ++k) v += cur[i * d + k] * w.at(k, j);
        const double pred = 1.0 / (1.0 + std::exp(-v));
        const double resid = std::fabs(pred - batch.boxes.at(i, j));
        probe.min_smooth_l1_margin = std::min(probe.min_smooth_l1_margin, std::fabs(resid - 1.0));
      }
    }
  }
  return probe;
}

} // namespace gradcheck_detail

// Central finite-difference verification of every loss the model trains
// with, plus the three end-to-end task compositions on a small model.
inline std::vector<GradCheckReport> run_gradcheck(int instances = 50, std::uint64_t seed = 7,
                                                  double tol = 1e-4, double h = 1e-5) {
  using gradcheck_detail::Instance;
  namespace gd = gradcheck_detail;
  std::vector<GradCheckReport> out;
  Rng rng(Rng::derive(seed, {0x6c4d}));

  auto random_tensor = [](std::vector<std::size_t> shape, Rng& r, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = r.uniform(lo, hi);
    return t;
  };

  out.push_back(gd::run_loss(
      "softmax_cross_entropy", instances, tol, h,
      [&](Rng& r) {
        Instance inst;
        inst.params.add("logits", Role::backbone(), random_tensor({3, 5}, r, -1.0, 1.0));
        std::vector<std::size_t> targets{r.index(5), r.index(5), r.index(5)};
        inst.loss = [targets](Tape& t, const ParamStore& s) {
          return softmax_cross_entropy(param(t, s, "logits"), targets);
        };
        return inst;
      },
      rng));

  out.push_back(gd::run_loss(
      "per_pixel_cross_entropy", instances, tol, h,
      [&](Rng& r) {
        // 2 samples x 2x3 pixels x 3 classes, reshaped exactly like the seg head
        Instance inst;
        inst.params.add("logits", Role::backbone(), random_tensor({2, 2, 3, 3}, r, -1.0, 1.0));
        std::vector<std::size_t> targets(12);
        for (auto& v : targets) v = r.index(3);
        inst.loss = [targets](Tape& t, const ParamStore& s) {
          return softmax_cross_entropy(reshape(param(t, s, "logits"), {12, 3}), targets);
        };
        return inst;
      },
      rng));

  out.push_back(gd::run_loss(
      "smooth_l1", instances, tol, h,
      [&](Rng& r) {
        Instance inst;
        Tensor target = random_tensor({2, 4}, r, -1.0, 1.0);
        Tensor pred = target;
        for (std::size_t i = 0; i < pred.numel(); ++i) {
          double d = 0.0;
          do {
            d = r.uniform(-2.5, 2.5);
          } while (std::fabs(std::fabs(d) - 1.0) < gd::kKinkMargin || std::fabs(d) < gd::kKinkMargin);
          pred[i] += d;
        }
        inst.params.add("pred", Role::backbone(), pred);
        inst.loss = [target](Tape& t, const ParamStore& s) {
          return smooth_l1(param(t, s, "pred"), target, 1.0);
        };
        return inst;
      },
      rng));

  out.push_back(gd::run_loss(
      "arcface_margin_0.4", instances, tol, h,
      [&](Rng& r) {
        ArcFaceConfig acfg;
        acfg.classes = 3;
        acfg.margin = 0.4;
        acfg.scale = 8.0;
        Instance inst;
        Tensor feat, w;
        // keep cosines away from the clamp and rows away from zero norm
        for (;;) {
          feat = random_tensor({2, 5}, r, -1.0, 1.0);
          w = random_tensor({3, 5}, r, -1.0, 1.0);
          double worst_cos = 0.0, min_norm = 1e300;
          for (std::size_t i = 0; i < 2; ++i) {
            double fn = 0;
            for (std::size_t j = 0; j < 5; ++j) fn += feat.at(i, j) * feat.at(i, j);
            fn = std::sqrt(fn);
            min_norm = std::min(min_norm, fn);
            for (std::size_t c = 0; c < 3; ++c) {
              double wn = 0, dp = 0;
              for (std::size_t j = 0; j < 5; ++j) {
                wn += w.at(c, j) * w.at(c, j);
                dp += w.at(c, j) * feat.at(i, j);
              }
              wn = std::sqrt(wn);
              min_norm = std::min(min_norm, wn);
              if (fn > 0 && wn > 0) worst_cos = std::max(worst_cos, std::fabs(dp / (fn * wn)));
            }
          }
          if (worst_cos < 0.99 && min_norm > 0.1) break;
        }
        std::vector<std::size_t> targets{r.index(3), r.index(3)};
        inst.params.add("feat", Role::backbone(), feat);
        inst.params.add("w", Role::head("cls"), w);
        ArcFaceConfig captured = acfg;
        inst.loss = [targets, captured](Tape& t, const ParamStore& s) {
          return arcface_loss(t, param(t, s, "feat"), param(t, s, "w"), targets, captured);
        };
        return inst;
      },
      rng));

  // end-to-end task compositions on a small model
  ModelConfig mc;
  mc.backbone.height = 4;
  mc.backbone.width = 4;
  mc.backbone.channels = 1;
  mc.backbone.hidden = {6};
  mc.backbone.feature_dim = 5;
  mc.cls.hidden = 4;
  mc.arcface.classes = 3;
  mc.arcface.scale = 8.0;
  mc.seg.classes = 3;

  const int composed = std::max(5, instances / 5);
  auto composed_instance = [&](Rng& r, const std::string& task) {
    for (int attempt = 0;; ++attempt) {
      ParamStore store = init_params(mc, r.next_u64());
      Batch batch;
      batch.images = random_tensor({2, 4, 4, 1}, r, 0.05, 1.0);
      batch.classes = {r.index(3), r.index(3)};
      batch.pixels.resize(2 * 16);
      for (auto& p : batch.pixels) p = r.index(3);
      batch.boxes = Tensor({2, 4});
      for (std::size_t i = 0; i < 8; ++i) batch.boxes[i] = r.uniform(0.2, 0.8);

      gd::KinkProbe probe = gd::probe_model(store, mc, batch, task);
      const bool relu_ok = probe.min_relu_margin > gd::kKinkMargin;
      const bool feat_ok = task != kTaskCls || (probe.min_feat_norm > 0.05 && probe.max_abs_cos < 0.99);
      const bool l1_ok = task != kTaskDet || probe.min_smooth_l1_margin > gd::kKinkMargin;
      if ((relu_ok && feat_ok && l1_ok) || attempt > 200) {
        Instance inst;
        inst.params = std::move(store);
        ModelConfig captured = mc;
        if (task == kTaskCls) {
          inst.loss = [captured, batch](Tape& t, const ParamStore& s) {
            return cls_task_loss(t, s, captured, batch);
          };
        } else if (task == kTaskSeg) {
          inst.loss = [captured, batch](Tape& t, const ParamStore& s) {
            return seg_task_loss(t, s, captured, batch);
          };
        } else {
          inst.loss = [captured, batch](Tape& t, const ParamStore& s) {
            return det_task_loss(t, s, captured, batch);
          };
        }
        return inst;
      }
    }
  };

  for (const std::string task : {kTaskCls, kTaskSeg, kTaskDet}) {
    out.push_back(gd::run_loss(
        "model_" + task + "_end_to_end", composed, tol, h,
        [&](Rng& r) { return composed_instance(r, task); }, rng));
  }
  return out;
}

inline bool gradcheck_all_pass(const std::vector<GradCheckReport>& reports) {
  for (const GradCheckReport& r : reports) {
    if (!r.pass) return false;
  }
  return true;
}

} // namespace tbgc
