#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tbgc/autodiff.hpp"
#include "tbgc/param_store.hpp"
#include "tbgc/rng.hpp"

namespace tbgc {

inline constexpr const char* kTaskCls = "cls";
inline constexpr const char* kTaskSeg = "seg";
inline constexpr const char* kTaskDet = "det";

// Shared feature extractor: flatten, then linear+relu through the hidden
// widths and out to feature_dim.
struct BackboneConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::vector<std::size_t> hidden{128};
  std::size_t feature_dim = 64;

  std::size_t input_dim() const { return height * width * channels; }
};

struct ArcFaceConfig {
  double margin = 0.4; // radians
  double scale = 16.0; // logit multiplier
  std::size_t classes = 8;
};

struct ClsHeadConfig {
  std::size_t hidden = 64;
};

struct SegHeadConfig {
  std::size_t classes = 3; // background / rectangle / border
};

struct ModelConfig {
  BackboneConfig backbone;
  ClsHeadConfig cls;
  ArcFaceConfig arcface;
  SegHeadConfig seg;
  double smooth_l1_beta = 1.0;
};

// One training batch. Tasks read only the label field they need.
struct Batch {
  Tensor images;                     // n x H x W x c
  std::vector<std::size_t> classes;  // cls: one index per sample
  std::vector<std::size_t> pixels;   // seg: one class per pixel, n*H*W
  Tensor boxes;                      // det: n x 4, (cx, cy, w, h) in [0,1]

  std::size_t size() const { return images.rank() == 0 ? 0 : images.shape()[0]; }
};

namespace detail {

inline Tensor init_linear(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor w({fan_in, fan_out});
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = s * rng.normal();
  return w;
}

} // namespace detail

// Fresh parameter set for the full three-task model, seeded deterministically.
// Backbone biases start slightly positive so no relu unit is born dead.
inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, {0x1717}));
  ParamStore store;

  std::size_t in = cfg.backbone.input_dim();
  std::size_t layer = 0;
  for (std::size_t h : cfg.backbone.hidden) {
    store.add("backbone.w" + std::to_string(layer), Role::backbone(), detail::init_linear(in, h, rng));
    store.add("backbone.b" + std::to_string(layer), Role::backbone(), Tensor::full({h}, 0.01));
    in = h;
    ++layer;
  }
  store.add("backbone.w" + std::to_string(layer), Role::backbone(),
            detail::init_linear(in, cfg.backbone.feature_dim, rng));
  store.add("backbone.b" + std::to_string(layer), Role::backbone(),
            Tensor::full({cfg.backbone.feature_dim}, 0.01));

  const std::size_t d = cfg.backbone.feature_dim;
  store.add("cls.mlp.w0", Role::head(kTaskCls), detail::init_linear(d, cfg.cls.hidden, rng));
  store.add("cls.mlp.b0", Role::head(kTaskCls), Tensor::zeros({cfg.cls.hidden}));
  store.add("cls.mlp.w1", Role::head(kTaskCls), detail::init_linear(cfg.cls.hidden, d, rng));
  store.add("cls.mlp.b1", Role::head(kTaskCls), Tensor::zeros({d}));
  store.add("cls.arcface.weight", Role::head(kTaskCls), detail::init_linear(cfg.arcface.classes, d, rng));

  const std::size_t seg_out = cfg.backbone.height * cfg.backbone.width * cfg.seg.classes;
  store.add("seg.w", Role::head(kTaskSeg), detail::init_linear(d, seg_out, rng));
  store.add("seg.b", Role::head(kTaskSeg), Tensor::zeros({seg_out}));

  store.add("det.w", Role::head(kTaskDet), detail::init_linear(d, 4, rng));
  store.add("det.b", Role::head(kTaskDet), Tensor::zeros({4}));

  return store;
}

// Backbone features for a batch of images; touches only backbone parameters.
inline Var backbone_forward(Tape& tape, const ParamStore& store, const Tensor& x,
                            const BackboneConfig& cfg) {
  if (x.rank() != 4 || x.shape()[1] != cfg.height || x.shape()[2] != cfg.width ||
      x.shape()[3] != cfg.channels) {
    throw ShapeMismatch("backbone input " + x.shape_string());
  }
  const std::size_t n = x.shape()[0];
  Var h = reshape(tape.constant(x), {n, cfg.input_dim()});
  const std::size_t layers = cfg.hidden.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    Var w = param(tape, store, "backbone.w" + std::to_string(l));
    Var b = param(tape, store, "backbone.b" + std::to_string(l));
    h = relu(add(matmul(h, w), b));
  }
  return h;
}

// Residual classification trunk: feat + MLP(feat).
inline Var cls_head_forward(Tape& tape, const ParamStore& store, const Var& feat) {
  Var w0 = param(tape, store, "cls.mlp.w0");
  Var b0 = param(tape, store, "cls.mlp.b0");
  Var w1 = param(tape, store, "cls.mlp.w1");
  Var b1 = param(tape, store, "cls.mlp.b1");
  if (feat.shape().size() != 2 || feat.shape()[1] != w0.value().shape()[0]) {
    throw ShapeMismatch("cls head expects features of dim " + std::to_string(w0.value().shape()[0]));
  }
  Var h = relu(add(matmul(feat, w0), b0));
  Var delta = add(matmul(h, w1), b1);
  return add(feat, delta);
}

// Cosine similarity logits between normalized features and normalized class
// weight rows.
inline Var cosine_logits(Tape& tape, const Var& feat, const Var& class_weights) {
  (void)tape;
  return matmul(l2_normalize_rows(feat), l2_normalize_rows(class_weights), false, true);
}

// Additive angular margin loss: the target-class cosine is replaced by
// cos(theta + m) via the identity cos(theta)cos(m) - sin(theta)sin(m), then
// all logits are scaled and fed to softmax cross-entropy. Cosines are clamped
// to keep sqrt(1 - cos^2) away from its derivative singularity.
inline Var arcface_loss(Tape& tape, const Var& feat, const Var& class_weights,
                        const std::vector<std::size_t>& targets, const ArcFaceConfig& cfg) {
  const std::size_t n = feat.value().rows();
  const std::size_t classes = class_weights.value().rows();
  if (targets.size() != n) throw ShapeMismatch("arcface targets vs batch size");
  for (std::size_t t : targets) {
    if (t >= classes) throw IndexOutOfRange("arcface target " + std::to_string(t));
  }

  Var cos = cosine_logits(tape, feat, class_weights);
  Var cosc = clamp(cos, -1.0 + 1e-7, 1.0 - 1e-7);
  Var sin = sqrt(sub(tape.constant(Tensor::full({n, classes}, 1.0)), mul(cosc, cosc)));
  Var phi = sub(scalar_mul(cosc, std::cos(cfg.margin)), scalar_mul(sin, std::sin(cfg.margin)));

  Tensor onehot({n, classes});
  for (std::size_t i = 0; i < n; ++i) onehot.at(i, targets[i]) = 1.0;
  Tensor inv = onehot;
  for (std::size_t i = 0; i < inv.numel(); ++i) inv[i] = 1.0 - inv[i];

  Var margined = add(mul(cos, tape.constant(std::move(inv))), mul(phi, tape.constant(std::move(onehot))));
  return softmax_cross_entropy(scalar_mul(margined, cfg.scale), targets);
}

// Dense per-pixel logits from a single linear map.
inline Var seg_head_forward(Tape& tape, const ParamStore& store, const Var& feat,
                            const BackboneConfig& bb, const SegHeadConfig& seg) {
  Var w = param(tape, store, "seg.w");
  Var b = param(tape, store, "seg.b");
  if (feat.shape()[1] != w.value().shape()[0]) throw ShapeMismatch("seg head feature dim");
  const std::size_t n = feat.shape()[0];
  Var logits = add(matmul(feat, w), b);
  return reshape(logits, {n, bb.height, bb.width, seg.classes});
}

inline Var seg_loss(Tape& tape, const Var& pixel_logits, const std::vector<std::size_t>& pixel_targets) {
  const auto& s = pixel_logits.shape();
  if (s.size() != 4) throw ShapeMismatch("seg loss expects n x H x W x K logits");
  const std::size_t n = s[0] * s[1] * s[2], k = s[3];
  (void)tape;
  return softmax_cross_entropy(reshape(pixel_logits, {n, k}), pixel_targets);
}

// Box regression to (cx, cy, w, h) squashed into [0,1].
inline Var det_head_forward(Tape& tape, const ParamStore& store, const Var& feat) {
  Var w = param(tape, store, "det.w");
  Var b = param(tape, store, "det.b");
  if (feat.shape()[1] != w.value().shape()[0]) throw ShapeMismatch("det head feature dim");
  return sigmoid(add(matmul(feat, w), b));
}

inline Var det_loss(const Var& pred_boxes, const Tensor& target_boxes, double beta = 1.0) {
  return smooth_l1(pred_boxes, target_boxes, beta);
}

// ---- per-task losses as used by the training loop -------------------------

inline Var cls_task_loss(Tape& tape, const ParamStore& store, const ModelConfig& cfg, const Batch& b) {
  Var feat = backbone_forward(tape, store, b.images, cfg.backbone);
  Var f = cls_head_forward(tape, store, feat);
  return arcface_loss(tape, f, param(tape, store, "cls.arcface.weight"), b.classes, cfg.arcface);
}

inline Var seg_task_loss(Tape& tape, const ParamStore& store, const ModelConfig& cfg, const Batch& b) {
  Var feat = backbone_forward(tape, store, b.images, cfg.backbone);
  Var logits = seg_head_forward(tape, store, feat, cfg.backbone, cfg.seg);
  return seg_loss(tape, logits, b.pixels);
}

inline Var det_task_loss(Tape& tape, const ParamStore& store, const ModelConfig& cfg, const Batch& b) {
  Var feat = backbone_forward(tape, store, b.images, cfg.backbone);
  Var pred = det_head_forward(tape, store, feat);
  return det_loss(pred, b.boxes, cfg.smooth_l1_beta);
}

// ---- inference helpers for evaluation --------------------------------------

// One task's raw prediction: cosine logits (cls, n x C), per-pixel logits
// (seg, n x H x W x K), or boxes (det, n x 4).
struct TaskOutput {
  std::string task;
  Tensor prediction;
};

inline TaskOutput task_forward(const ParamStore& store, const ModelConfig& cfg,
                               const std::string& task, const Tensor& images) {
  Tape tape;
  Var feat = backbone_forward(tape, store, images, cfg.backbone);
  if (task == kTaskCls) {
    Var f = cls_head_forward(tape, store, feat);
    return {task, cosine_logits(tape, f, param(tape, store, "cls.arcface.weight")).value()};
  }
  if (task == kTaskSeg) {
    return {task, seg_head_forward(tape, store, feat, cfg.backbone, cfg.seg).value()};
  }
  if (task == kTaskDet) {
    return {task, det_head_forward(tape, store, feat).value()};
  }
  throw Error("unknown task '" + task + "'");
}

inline std::vector<std::size_t> predict_classes(const ParamStore& store, const ModelConfig& cfg,
                                                const Tensor& images) {
  const Tensor c = task_forward(store, cfg, kTaskCls, images).prediction;
  std::vector<std::size_t> out(c.rows());
  for (std::size_t i = 0; i < c.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c.cols(); ++j) {
      if (c.at(i, j) > c.at(i, best)) best = j;
    }
    out[i] = best;
  }
  return out;
}

inline std::vector<std::size_t> predict_pixels(const ParamStore& store, const ModelConfig& cfg,
                                               const Tensor& images) {
  const Tensor l = task_forward(store, cfg, kTaskSeg, images).prediction;
  const std::size_t pixels = l.shape()[0] * l.shape()[1] * l.shape()[2];
  const std::size_t k = l.shape()[3];
  std::vector<std::size_t> out(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (l[p * k + c] > l[p * k + best]) best = c;
    }
    out[p] = best;
  }
  return out;
}

inline Tensor predict_boxes(const ParamStore& store, const ModelConfig& cfg, const Tensor& images) {
  return task_forward(store, cfg, kTaskDet, images).prediction;
}

} // namespace tbgc
