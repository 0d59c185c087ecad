#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tbgc/error.hpp"
#include "tbgc/rng.hpp"
#include "tbgc/tensor.hpp"

namespace tbgc {

struct BoxLabel {
  double cx = 0.5, cy = 0.5, w = 0.1, h = 0.1;

  bool valid() const {
    return cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && w > 0.0 && h > 0.0 &&
           w <= 1.0 && h <= 1.0;
  }
};

// One datum plus whichever labels its task carries. Geometric ops remap every
// label that is present.
struct Sample {
  Tensor image;                                  // H x W x c
  std::optional<std::size_t> class_label;        // cls
  std::optional<std::vector<double>> soft_label; // cls after mixup
  std::optional<std::vector<std::size_t>> mask;  // seg, H*W entries
  std::optional<BoxLabel> box;                   // det

  std::size_t height() const { return image.shape()[0]; }
  std::size_t width() const { return image.shape()[1]; }
  std::size_t channels() const { return image.shape()[2]; }

  void check() const {
    if (image.rank() != 3) throw ShapeMismatch("sample image must be H x W x c");
    if (mask && mask->size() != height() * width()) throw ShapeMismatch("mask size vs image dims");
    if (box && !box->valid()) throw SampleRejected("box outside [0,1] or degenerate");
  }
};

enum class AugKind { HFlip, Noise, MultiScale, RandomCrop, Rotate, MixUp, Mosaic, PolicyStandIn };

// Strong ops substantially shift the data distribution (cross-sample mixing,
// compound policies); everything single-sample geometric/photometric is weak.
inline bool is_strong(AugKind k) {
  return k == AugKind::MixUp || k == AugKind::Mosaic || k == AugKind::PolicyStandIn;
}

inline const char* aug_kind_name(AugKind k) {
  switch (k) {
    case AugKind::HFlip: return "hflip";
    case AugKind::Noise: return "noise";
    case AugKind::MultiScale: return "multiscale";
    case AugKind::RandomCrop: return "random_crop";
    case AugKind::Rotate: return "rotate";
    case AugKind::MixUp: return "mixup";
    case AugKind::Mosaic: return "mosaic";
    case AugKind::PolicyStandIn: return "policy_standin";
  }
  return "?";
}

inline AugKind parse_aug_kind(const std::string& s) {
  for (AugKind k : {AugKind::HFlip, AugKind::Noise, AugKind::MultiScale, AugKind::RandomCrop,
                    AugKind::Rotate, AugKind::MixUp, AugKind::Mosaic, AugKind::PolicyStandIn}) {
    if (s == aug_kind_name(k)) return k;
  }
  throw InvalidConfig("unknown augmentation '" + s + "'");
}

struct AugOp {
  AugKind kind;
};

// Shared numeric knobs for the ops in one pipeline.
struct AugParams {
  double noise_sigma = 0.05;
  double crop_ratio = 0.75;      // crop extent as a fraction of each dim
  double scale_min = 0.5;        // multiscale resize range
  double scale_max = 2.0;
  double contrast_min = 0.75;    // policy stand-in jitter range
  double contrast_max = 1.25;
};

// An ordered op list holding at most one strong augmentation; constructing a
// branch with two strong ops fails.
class AugBranch {
public:
  explicit AugBranch(std::vector<AugOp> ops) : ops_(std::move(ops)) {
    int strong = 0;
    for (const AugOp& op : ops_) strong += is_strong(op.kind) ? 1 : 0;
    if (strong > 1) {
      std::string names;
      for (const AugOp& op : ops_) {
        if (is_strong(op.kind)) names += std::string(names.empty() ? "" : ", ") + aug_kind_name(op.kind);
      }
      throw MultipleStrongOps(names);
    }
  }

  // Escape hatch for the "parallel" baseline strategy, which stacks every op
  // in sequence and so may hold several strong ops.
  static AugBranch unchecked(std::vector<AugOp> ops) {
    AugBranch b;
    b.ops_ = std::move(ops);
    return b;
  }

  const std::vector<AugOp>& ops() const { return ops_; }

  // Extra same-dataset samples the branch consumes in sequence (MixUp 1,
  // Mosaic 3 each time they appear).
  std::size_t partners_needed() const {
    std::size_t n = 0;
    for (const AugOp& op : ops_) {
      if (op.kind == AugKind::MixUp) n += 1;
      if (op.kind == AugKind::Mosaic) n += 3;
    }
    return n;
  }

private:
  AugBranch() = default;

  std::vector<AugOp> ops_;
};

// Branches plus a per-epoch curriculum over their selection probabilities.
// Each sample passes through exactly one branch, drawn by RandomChoice.
struct MultiBranchPipeline {
  std::vector<AugBranch> branches;
  std::vector<double> start_probs;
  std::vector<double> end_probs;
  long total_epochs = 1;
  AugParams params;

  void validate() const {
    auto check_probs = [&](const std::vector<double>& p, const char* which) {
      if (p.size() != branches.size()) {
        throw InvalidConfig(std::string(which) + " probability count vs branch count");
      }
      double s = 0.0;
      for (double v : p) {
        if (v < 0.0) throw InvalidConfig(std::string(which) + " probabilities must be nonnegative");
        s += v;
      }
      if (std::fabs(s - 1.0) > 1e-9) throw InvalidConfig(std::string(which) + " probabilities must sum to 1");
    };
    if (branches.empty()) throw InvalidConfig("pipeline needs at least one branch");
    check_probs(start_probs, "start");
    check_probs(end_probs, "end");
    if (total_epochs <= 0) throw InvalidConfig("pipeline total_epochs must be positive");
  }
};

// Linear interpolation from start to end probabilities, renormalized against
// rounding drift.
inline std::vector<double> branch_probs(const MultiBranchPipeline& p, long epoch) {
  if (epoch < 0) epoch = 0;
  if (epoch > p.total_epochs) epoch = p.total_epochs;
  const double f = static_cast<double>(epoch) / static_cast<double>(p.total_epochs);
  std::vector<double> probs(p.branches.size());
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = p.start_probs[i] + f * (p.end_probs[i] - p.start_probs[i]);
    s += probs[i];
  }
  for (double& v : probs) v /= s;
  return probs;
}

// ---- single ops ------------------------------------------------------------

inline Sample hflip(const Sample& s) {
  Sample out = s;
  const std::size_t h = s.height(), w = s.width(), c = s.channels();
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t ch = 0; ch < c; ++ch)
        out.image[(i * w + j) * c + ch] = s.image[(i * w + (w - 1 - j)) * c + ch];
  if (s.mask) {
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) (*out.mask)[i * w + j] = (*s.mask)[i * w + (w - 1 - j)];
  }
  if (s.box) out.box->cx = 1.0 - s.box->cx;
  return out;
}

// Convex combination of two images. At the endpoints the untouched sample is
// returned so identity cases stay bit-exact. Classification labels become a
// soft distribution; the primary sample keeps its mask/box.
inline Sample mixup(const Sample& s1, const Sample& s2, double lambda, std::size_t num_classes = 0) {
  if (lambda < 0.0 || lambda > 1.0) throw Error("mixup lambda outside [0,1]");
  if (lambda == 1.0) return s1;
  if (lambda == 0.0) return s2;
  if (!s1.image.same_shape(s2.image)) {
    throw ShapeMismatch("mixup images " + s1.image.shape_string() + " vs " + s2.image.shape_string());
  }
  Sample out = s1;
  for (std::size_t i = 0; i < out.image.numel(); ++i) {
    out.image[i] = lambda * s1.image[i] + (1.0 - lambda) * s2.image[i];
  }
  if (s1.class_label && s2.class_label) {
    std::size_t n = num_classes;
    if (n == 0) n = std::max(*s1.class_label, *s2.class_label) + 1;
    std::vector<double> soft(n, 0.0);
    soft[*s1.class_label] += lambda;
    soft[*s2.class_label] += 1.0 - lambda;
    out.soft_label = std::move(soft);
    out.class_label.reset();
  }
  return out;
}

namespace detail {

// Nearest-neighbor source row/col for resize: floor(i * src / dst).
inline std::size_t nn_index(std::size_t i, std::size_t src, std::size_t dst) {
  return std::min(src - 1, i * src / dst);
}

} // namespace detail

inline Sample resize_to(const Sample& s, std::size_t nh, std::size_t nw) {
  if (nh == 0 || nw == 0) throw ShapeMismatch("resize to zero extent");
  const std::size_t h = s.height(), w = s.width(), c = s.channels();
  if (nh == h && nw == w) return s;
  Sample out = s;
  out.image = Tensor({nh, nw, c});
  for (std::size_t i = 0; i < nh; ++i) {
    const std::size_t si = detail::nn_index(i, h, nh);
    for (std::size_t j = 0; j < nw; ++j) {
      const std::size_t sj = detail::nn_index(j, w, nw);
      for (std::size_t ch = 0; ch < c; ++ch)
        out.image[(i * nw + j) * c + ch] = s.image[(si * w + sj) * c + ch];
    }
  }
  if (s.mask) {
    std::vector<std::size_t> m(nh * nw);
    for (std::size_t i = 0; i < nh; ++i) {
      const std::size_t si = detail::nn_index(i, h, nh);
      for (std::size_t j = 0; j < nw; ++j) m[i * nw + j] = (*s.mask)[si * w + detail::nn_index(j, w, nw)];
    }
    out.mask = std::move(m);
  }
  // Boxes are normalized; resize leaves them unchanged.
  return out;
}

inline Sample multiscale_resize(const Sample& s, double scale) {
  if (!(scale > 0.0)) throw Error("multiscale scale must be positive");
  const auto nh = static_cast<std::size_t>(std::lround(static_cast<double>(s.height()) * scale));
  const auto nw = static_cast<std::size_t>(std::lround(static_cast<double>(s.width()) * scale));
  return resize_to(s, std::max<std::size_t>(1, nh), std::max<std::size_t>(1, nw));
}

inline Sample multiscale_resize(const Sample& s, double scale_min, double scale_max, Rng& rng) {
  return multiscale_resize(s, rng.uniform(scale_min, scale_max));
}

// Fixed-position crop; the random wrapper below picks the corner. The box is
// clipped to the window and renormalized; a box that falls outside rejects
// the sample.
inline Sample crop(const Sample& s, std::size_t i0, std::size_t j0, std::size_t ch_, std::size_t cw) {
  const std::size_t h = s.height(), w = s.width(), c = s.channels();
  if (ch_ > h || cw > w) {
    throw CropLargerThanImage(std::to_string(ch_) + "x" + std::to_string(cw) + " from " +
                              std::to_string(h) + "x" + std::to_string(w));
  }
  if (i0 + ch_ > h || j0 + cw > w) throw IndexOutOfRange("crop window outside image");
  Sample out = s;
  out.image = Tensor({ch_, cw, c});
  for (std::size_t i = 0; i < ch_; ++i)
    for (std::size_t j = 0; j < cw; ++j)
      for (std::size_t k = 0; k < c; ++k)
        out.image[(i * cw + j) * c + k] = s.image[((i0 + i) * w + (j0 + j)) * c + k];
  if (s.mask) {
    std::vector<std::size_t> m(ch_ * cw);
    for (std::size_t i = 0; i < ch_; ++i)
      for (std::size_t j = 0; j < cw; ++j) m[i * cw + j] = (*s.mask)[(i0 + i) * w + (j0 + j)];
    out.mask = std::move(m);
  }
  if (s.box) {
    const double wx0 = static_cast<double>(j0) / w, wx1 = static_cast<double>(j0 + cw) / w;
    const double wy0 = static_cast<double>(i0) / h, wy1 = static_cast<double>(i0 + ch_) / h;
    const double bx0 = std::max(s.box->cx - s.box->w / 2.0, wx0);
    const double bx1 = std::min(s.box->cx + s.box->w / 2.0, wx1);
    const double by0 = std::max(s.box->cy - s.box->h / 2.0, wy0);
    const double by1 = std::min(s.box->cy + s.box->h / 2.0, wy1);
    if (bx1 - bx0 < 1e-6 || by1 - by0 < 1e-6) {
      throw SampleRejected("box cropped away");
    }
    BoxLabel b;
    b.cx = ((bx0 + bx1) / 2.0 - wx0) / (wx1 - wx0);
    b.cy = ((by0 + by1) / 2.0 - wy0) / (wy1 - wy0);
    b.w = (bx1 - bx0) / (wx1 - wx0);
    b.h = (by1 - by0) / (wy1 - wy0);
    out.box = b;
  }
  return out;
}

// Uniform-position crop of the given extent.
inline Sample random_crop(const Sample& s, std::size_t crop_h, std::size_t crop_w, Rng& rng) {
  if (crop_h > s.height() || crop_w > s.width()) {
    throw CropLargerThanImage(std::to_string(crop_h) + "x" + std::to_string(crop_w));
  }
  const std::size_t i0 = rng.index(s.height() - crop_h + 1);
  const std::size_t j0 = rng.index(s.width() - crop_w + 1);
  return crop(s, i0, j0, crop_h, crop_w);
}

// Quarter-turn rotation (counterclockwise), exact for square images.
inline Sample rotate90(const Sample& s, int quarter_turns) {
  int q = ((quarter_turns % 4) + 4) % 4;
  Sample out = s;
  for (int step = 0; step < q; ++step) {
    const std::size_t h = out.height(), w = out.width(), c = out.channels();
    Sample next = out;
    next.image = Tensor({w, h, c});
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t j = 0; j < h; ++j)
        for (std::size_t k = 0; k < c; ++k)
          next.image[(i * h + j) * c + k] = out.image[(j * w + (w - 1 - i)) * c + k];
    if (out.mask) {
      std::vector<std::size_t> m(w * h);
      for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < h; ++j) m[i * h + j] = (*out.mask)[j * w + (w - 1 - i)];
      next.mask = std::move(m);
    }
    if (out.box) {
      BoxLabel b = *out.box;
      next.box = BoxLabel{b.cy, 1.0 - b.cx, b.h, b.w};
    }
    out = std::move(next);
  }
  return out;
}

// Rotation by a random choice from the 90-degree multiples.
inline Sample rotate(const Sample& s, Rng& rng) { return rotate90(s, 1 + static_cast<int>(rng.index(3))); }

inline Sample add_noise(const Sample& s, double sigma, Rng& rng) {
  if (sigma < 0.0) throw Error("noise sigma must be nonnegative");
  Sample out = s;
  for (std::size_t i = 0; i < out.image.numel(); ++i) out.image[i] += sigma * rng.normal();
  return out;
}

inline Sample contrast_jitter(const Sample& s, double factor) {
  Sample out = s;
  double mean = 0.0;
  for (std::size_t i = 0; i < s.image.numel(); ++i) mean += s.image[i];
  mean /= static_cast<double>(s.image.numel());
  for (std::size_t i = 0; i < out.image.numel(); ++i) {
    out.image[i] = mean + (s.image[i] - mean) * factor;
  }
  return out;
}

// Four images tiled 2x2 and scaled back to the primary sample's dims. Masks
// tile the same way; the primary sample's box maps into the top-left quadrant
// (the toy detection task is single-box).
inline Sample mosaic(const Sample& s1, const Sample& s2, const Sample& s3, const Sample& s4) {
  const Sample* parts[4] = {&s1, &s2, &s3, &s4};
  for (const Sample* p : parts) {
    if (!p->image.same_shape(s1.image)) throw ShapeMismatch("mosaic inputs must share one shape");
  }
  const std::size_t h = s1.height(), w = s1.width(), c = s1.channels();
  Tensor tile({2 * h, 2 * w, c});
  std::vector<std::size_t> tile_mask(s1.mask ? 4 * h * w : 0);
  for (int q = 0; q < 4; ++q) {
    const std::size_t oi = (q / 2) * h, oj = (q % 2) * w;
    const Sample& p = *parts[q];
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        for (std::size_t k = 0; k < c; ++k)
          tile[((oi + i) * 2 * w + (oj + j)) * c + k] = p.image[(i * w + j) * c + k];
        if (s1.mask) {
          const std::size_t v = p.mask ? (*p.mask)[i * w + j] : 0;
          tile_mask[(oi + i) * 2 * w + (oj + j)] = v;
        }
      }
  }
  Sample stitched = s1;
  stitched.image = std::move(tile);
  if (s1.mask) stitched.mask = std::move(tile_mask);
  stitched.box.reset();
  Sample out = resize_to(stitched, h, w);
  if (s1.box) {
    out.box = BoxLabel{s1.box->cx * 0.5, s1.box->cy * 0.5, s1.box->w * 0.5, s1.box->h * 0.5};
  }
  return out;
}

// ---- pipeline application --------------------------------------------------

struct ApplyResult {
  Sample sample;
  std::size_t branch_index = 0;
  std::vector<std::string> ops_applied;
};

namespace detail {

inline Sample partner_like(const Sample& current, const Sample& raw) {
  // Partners come from the raw dataset; match them to the working dims in
  // case an earlier op in the branch resized the sample.
  return resize_to(raw, current.height(), current.width());
}

inline Sample apply_op(const AugOp& op, Sample s, const AugParams& prm,
                       std::span<const Sample> extras, std::size_t& extra_cursor, Rng& rng) {
  switch (op.kind) {
    case AugKind::HFlip:
      return hflip(s);
    case AugKind::Noise:
      return add_noise(s, prm.noise_sigma, rng);
    case AugKind::MultiScale:
      return multiscale_resize(s, prm.scale_min, prm.scale_max, rng);
    case AugKind::RandomCrop: {
      const auto ch_ = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                    std::lround(prm.crop_ratio * static_cast<double>(s.height()))));
      const auto cw = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                   std::lround(prm.crop_ratio * static_cast<double>(s.width()))));
      return random_crop(s, ch_, cw, rng);
    }
    case AugKind::Rotate:
      return rotate(s, rng);
    case AugKind::MixUp: {
      if (extra_cursor >= extras.size()) throw InsufficientSamples("mixup needs 1 partner");
      Sample partner = partner_like(s, extras[extra_cursor++]);
      return mixup(s, partner, rng.uniform(), 0);
    }
    case AugKind::Mosaic: {
      if (extra_cursor + 3 > extras.size()) throw InsufficientSamples("mosaic needs 3 partners");
      Sample p1 = partner_like(s, extras[extra_cursor]);
      Sample p2 = partner_like(s, extras[extra_cursor + 1]);
      Sample p3 = partner_like(s, extras[extra_cursor + 2]);
      extra_cursor += 3;
      return mosaic(s, p1, p2, p3);
    }
    case AugKind::PolicyStandIn: {
      // Documented stand-in for a learned policy: one random pick among
      // rotate-90, contrast jitter, noise.
      switch (rng.index(3)) {
        case 0: return rotate90(s, 1);
        case 1: return contrast_jitter(s, rng.uniform(prm.contrast_min, prm.contrast_max));
        default: return add_noise(s, prm.noise_sigma, rng);
      }
    }
  }
  throw Error("unhandled augmentation kind");
}

} // namespace detail

inline ApplyResult apply_branch(const AugBranch& branch, const Sample& s, const AugParams& prm,
                                std::span<const Sample> extras, Rng& rng) {
  ApplyResult res;
  res.sample = s;
  std::size_t cursor = 0;
  for (const AugOp& op : branch.ops()) {
    res.sample = detail::apply_op(op, std::move(res.sample), prm, extras, cursor, rng);
    res.ops_applied.push_back(aug_kind_name(op.kind));
  }
  res.sample.check();
  return res;
}

// Draws one branch by the epoch's probabilities and applies only that branch.
inline ApplyResult apply(const MultiBranchPipeline& p, const Sample& s,
                         std::span<const Sample> extras, long epoch, Rng& rng) {
  p.validate();
  const std::vector<double> probs = branch_probs(p, epoch);
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t pick = probs.size() - 1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) {
      pick = i;
      break;
    }
  }
  ApplyResult res = apply_branch(p.branches[pick], s, p.params, extras, rng);
  res.branch_index = pick;
  return res;
}

} // namespace tbgc
