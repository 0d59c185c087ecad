#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tbgc/augment.hpp"
#include "tbgc/model.hpp"
#include "tbgc/rng.hpp"

namespace tbgc {

// One synthetic task: id, size, the loss-scale multiplier used to induce the
// gradient-norm imbalance, and the batch size.
struct TaskSpec {
  std::string id;             // cls | seg | det
  std::size_t dataset_size = 64;
  std::size_t batch_size = 2;
  double loss_scale = 1.0;
  std::size_t classes = 8;    // cls only

  void validate() const {
    if (id != kTaskCls && id != kTaskSeg && id != kTaskDet) {
      throw InvalidConfig("unknown task id '" + id + "'");
    }
    if (dataset_size == 0) throw InvalidConfig("task." + id + ".dataset_size must be positive");
    if (batch_size == 0) throw InvalidConfig("task." + id + ".batch_size must be positive");
    if (!(loss_scale > 0.0)) throw InvalidConfig("task." + id + ".loss_scale must be positive");
  }
};

struct Dataset {
  std::string task;
  std::vector<Sample> samples;
};

namespace detail {

// Pixel-space rectangle with a one-pixel border ring; interior class 2,
// border class 1 on the mask. Total non-background count is exactly pw * ph.
inline void paint_rectangle(Sample& s, std::size_t y0, std::size_t x0, std::size_t ph, std::size_t pw,
                            bool with_mask) {
  const std::size_t w = s.width();
  if (with_mask) s.mask.emplace(s.height() * s.width(), 0);
  for (std::size_t i = 0; i < ph; ++i) {
    for (std::size_t j = 0; j < pw; ++j) {
      const bool border = i == 0 || j == 0 || i == ph - 1 || j == pw - 1;
      const std::size_t at = (y0 + i) * w + (x0 + j);
      s.image[at] += border ? 0.45 : 0.8;
      if (with_mask) (*s.mask)[at] = border ? 1 : 2;
    }
  }
}

} // namespace detail

// Deterministic synthetic data. cls: one Gaussian blob per class positioned
// on a ring, on a noisy background. seg/det: one axis-aligned rectangle per
// image with its exact mask / normalized box.
inline Dataset generate_dataset(const TaskSpec& spec, const BackboneConfig& geom, std::uint64_t seed) {
  spec.validate();
  Dataset ds;
  ds.task = spec.id;
  ds.samples.reserve(spec.dataset_size);
  Rng rng(Rng::derive(seed, {0xda7a, std::hash<std::string>{}(spec.id)}));

  const std::size_t h = geom.height, w = geom.width;
  const double noise = 0.25;

  for (std::size_t idx = 0; idx < spec.dataset_size; ++idx) {
    Sample s;
    s.image = Tensor({h, w, geom.channels});
    for (std::size_t i = 0; i < s.image.numel(); ++i) s.image[i] = 0.1 + noise * rng.normal();

    if (spec.id == kTaskCls) {
      // classes are tight blobs at fine-grained ring positions, so telling
      // them apart needs sharper spatial features than the box tasks do
      const std::size_t label = idx % spec.classes;
      const double angle = 6.283185307179586 * static_cast<double>(label) / static_cast<double>(spec.classes);
      const double cy = h / 2.0 + 0.32 * h * std::sin(angle) + rng.uniform(-0.7, 0.7);
      const double cx = w / 2.0 + 0.32 * w * std::cos(angle) + rng.uniform(-0.7, 0.7);
      const double sigma = 0.07 * static_cast<double>(std::min(h, w));
      const double amp = rng.uniform(1.1, 1.4);
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const double d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
          s.image[i * w + j] += amp * std::exp(-d2 / (2.0 * sigma * sigma));
        }
      }
      s.class_label = label;
    } else {
      // segmentation rectangles run large (solid interiors dominate the
      // mask); detection rectangles stay mid-sized so box regression is the
      // challenge
      const bool big = spec.id == kTaskSeg;
      const std::size_t ph = (big ? h / 2 : 3 + h / 8) + rng.index(h / 2 - (big ? h / 8 : 0));
      const std::size_t pw = (big ? w / 2 : 3 + w / 8) + rng.index(w / 2 - (big ? w / 8 : 0));
      const std::size_t y0 = rng.index(h - ph + 1);
      const std::size_t x0 = rng.index(w - pw + 1);
      detail::paint_rectangle(s, y0, x0, ph, pw, spec.id == kTaskSeg);
      if (spec.id == kTaskDet) {
        s.box = BoxLabel{(x0 + pw / 2.0) / w, (y0 + ph / 2.0) / h,
                         static_cast<double>(pw) / w, static_cast<double>(ph) / h};
      }
    }
    s.check();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// FNV-1a over image bytes and labels; equal digests mean byte-identical data.
inline std::uint64_t content_digest(const Dataset& ds) {
  std::uint64_t hash = 1469598103934665603ull;
  auto mix = [&hash](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ull;
    }
  };
  for (const Sample& s : ds.samples) {
    mix(s.image.data(), s.image.numel() * sizeof(double));
    if (s.class_label) mix(&*s.class_label, sizeof(std::size_t));
    if (s.mask) mix(s.mask->data(), s.mask->size() * sizeof(std::size_t));
    if (s.box) mix(&*s.box, sizeof(BoxLabel));
  }
  return hash;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

// Deterministic shuffled split; the eval tail holds ceil((1-frac)*n).
inline SplitIndices train_eval_split(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw InvalidConfig("train_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::derive(seed, {0x5917}));
  shuffle(order, rng);
  SplitIndices out;
  const std::size_t cut = std::max<std::size_t>(1, static_cast<std::size_t>(train_fraction * n));
  out.train.assign(order.begin(), order.begin() + cut);
  out.eval.assign(order.begin() + cut, order.end());
  if (out.eval.empty() && n > 1) {
    out.eval.push_back(out.train.back());
    out.train.pop_back();
  }
  return out;
}

// Stacks samples into one Batch at the model geometry, resizing any sample an
// augmentation left at other dims. Soft labels collapse to their argmax (the
// ArcFace target wants a hard class).
inline Batch make_batch(const std::vector<Sample>& samples, const std::string& task,
                        const BackboneConfig& geom) {
  if (samples.empty()) throw Error("empty batch");
  Batch b;
  const std::size_t n = samples.size();
  b.images = Tensor({n, geom.height, geom.width, geom.channels});
  if (task == kTaskSeg) b.pixels.reserve(n * geom.height * geom.width);
  if (task == kTaskDet) b.boxes = Tensor({n, 4});

  for (std::size_t k = 0; k < n; ++k) {
    Sample s = samples[k];
    if (s.height() != geom.height || s.width() != geom.width) {
      s = resize_to(s, geom.height, geom.width);
    }
    std::copy(s.image.data(), s.image.data() + s.image.numel(),
              b.images.data() + k * s.image.numel());
    if (task == kTaskCls) {
      if (s.class_label) {
        b.classes.push_back(*s.class_label);
      } else if (s.soft_label) {
        const auto& soft = *s.soft_label;
        b.classes.push_back(std::max_element(soft.begin(), soft.end()) - soft.begin());
      } else {
        throw Error("cls sample without label");
      }
    } else if (task == kTaskSeg) {
      if (!s.mask) throw Error("seg sample without mask");
      b.pixels.insert(b.pixels.end(), s.mask->begin(), s.mask->end());
    } else if (task == kTaskDet) {
      if (!s.box) throw Error("det sample without box");
      b.boxes.at(k, 0) = s.box->cx;
      b.boxes.at(k, 1) = s.box->cy;
      b.boxes.at(k, 2) = s.box->w;
      b.boxes.at(k, 3) = s.box->h;
    }
  }
  return b;
}

// ---- toy evaluation metrics (all in [0,1], higher is better) ---------------

inline double box_iou(const BoxLabel& a, const BoxLabel& b) {
  const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
  const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
  const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

inline double metric_top1(const ParamStore& store, const ModelConfig& cfg,
                          const std::vector<Sample>& eval_set) {
  if (eval_set.empty()) return 0.0;
  Batch b = make_batch(eval_set, kTaskCls, cfg.backbone);
  std::vector<std::size_t> pred = predict_classes(store, cfg, b.images);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == b.classes[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

inline double metric_mean_iou(const ParamStore& store, const ModelConfig& cfg,
                              const std::vector<Sample>& eval_set) {
  if (eval_set.empty()) return 0.0;
  Batch b = make_batch(eval_set, kTaskSeg, cfg.backbone);
  std::vector<std::size_t> pred = predict_pixels(store, cfg, b.images);
  const std::size_t k = cfg.seg.classes;
  std::vector<double> inter(k, 0.0), uni(k, 0.0);
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const std::size_t want = b.pixels[p], got = pred[p];
    if (want == got) {
      inter[want] += 1.0;
      uni[want] += 1.0;
    } else {
      uni[want] += 1.0;
      uni[got] += 1.0;
    }
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (uni[c] > 0.0) {
      sum += inter[c] / uni[c];
      ++present;
    }
  }
  return present == 0 ? 0.0 : sum / static_cast<double>(present);
}

inline double metric_box_hit_rate(const ParamStore& store, const ModelConfig& cfg,
                                  const std::vector<Sample>& eval_set, double iou_threshold = 0.5) {
  if (eval_set.empty()) return 0.0;
  Batch b = make_batch(eval_set, kTaskDet, cfg.backbone);
  Tensor pred = predict_boxes(store, cfg, b.images);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.rows(); ++i) {
    BoxLabel p{pred.at(i, 0), pred.at(i, 1), pred.at(i, 2), pred.at(i, 3)};
    BoxLabel t{b.boxes.at(i, 0), b.boxes.at(i, 1), b.boxes.at(i, 2), b.boxes.at(i, 3)};
    hit += box_iou(p, t) >= iou_threshold ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(pred.rows());
}

} // namespace tbgc
