// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exit code is the number of
// failed criteria.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tbgc/clip.hpp"
#include "tbgc/experiment.hpp"
#include "tbgc/gradcheck.hpp"
#include "tbgc/trainer.hpp"

using namespace tbgc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;

  Outcome() = default;
  Outcome(int id_, std::string name_) : id(id_), name(std::move(name_)) {}
};

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

// ---- randomized (gradient, partition, S) triples for criteria 1-3 ----------

struct GradCase {
  ParamStore store;
  GradMap grads;
  double max_norm;
};

GradCase random_grad_case(Rng& rng) {
  GradCase c;
  const std::size_t tensors = 2 + rng.index(6);
  bool any_backbone = false;
  for (std::size_t i = 0; i < tensors; ++i) {
    const std::size_t n = 1 + rng.index(8);
    const bool backbone = rng.uniform() < 0.5;
    any_backbone |= backbone;
    const std::string name = "p" + std::to_string(i);
    c.store.add(name, backbone ? Role::backbone() : Role::head("t" + std::to_string(i % 3)),
                Tensor::zeros({n}));
    Tensor g({n});
    for (std::size_t j = 0; j < n; ++j) g[j] = rng.uniform(-3.0, 3.0);
    c.grads.emplace(name, std::move(g));
  }
  if (!any_backbone) {
    c.store.add("pb", Role::backbone(), Tensor::zeros({2}));
    Tensor g({2}, {rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)});
    c.grads.emplace("pb", std::move(g));
  }
  c.max_norm = rng.uniform(1e-3, 10.0);
  return c;
}

// ---- tiny two-task model + scripted reference for criterion 5 --------------

struct TinySetup {
  ParamStore store;
  Tensor ca = Tensor({2}, {0.3, -1.2});
  Tensor da = Tensor({3}, {0.7, 0.1, -0.4});
  Tensor cb = Tensor({2}, {1.5, 0.25});
  Tensor db = Tensor({2}, {-0.6, 0.9});

  TinySetup() {
    store.add("bb.w", Role::backbone(), Tensor({2}, {0.5, -0.8}));
    store.add("a.w", Role::head("a"), Tensor({3}, {0.2, -0.1, 0.4}));
    store.add("b.w", Role::head("b"), Tensor({2}, {-0.3, 0.6}));
  }

  std::vector<TaskDef> tasks() {
    TaskDef ta{"a", [this](Tape& t, const ParamStore& s, const Batch&) {
                 return add(sum(mul(param(t, s, "bb.w"), t.constant(ca))),
                            sum(mul(param(t, s, "a.w"), t.constant(da))));
               }};
    TaskDef tb{"b", [this](Tape& t, const ParamStore& s, const Batch&) {
                 Var wb = param(t, s, "bb.w");
                 return add(sum(mul(mul(wb, wb), t.constant(cb))),
                            sum(mul(param(t, s, "b.w"), t.constant(db))));
               }};
    return {ta, tb};
  }

  std::map<std::string, std::vector<double>> grads_a() const {
    return {{"bb.w", {ca[0], ca[1]}}, {"a.w", {da[0], da[1], da[2]}}};
  }
  std::map<std::string, std::vector<double>> grads_b() const {
    const Tensor& wb = store.value("bb.w");
    return {{"bb.w", {2 * wb[0] * cb[0], 2 * wb[1] * cb[1]}}, {"b.w", {db[0], db[1]}}};
  }
};

double flat_norm(const std::map<std::string, std::vector<double>>& m, bool backbone_only) {
  double s = 0;
  for (const auto& [k, v] : m) {
    if (backbone_only && k != "bb.w") continue;
    for (double x : v) s += x * x;
  }
  return std::sqrt(s);
}

// ---- shared experiment configs ---------------------------------------------

std::string acceptance_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / "tbgc_acceptance" / tag;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

// Imbalanced synthetic suite: loss scales (1, 10, 100) on cls/seg/det, a
// narrow shared backbone so the tasks genuinely compete for features, and a
// learning rate that trains to a useful level inside 30 epochs. Augmentation
// is off so the comparison isolates the clip mode.
ExperimentConfig suite_config(std::uint64_t seed, long epochs, const std::string& tag) {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  cfg.seed = seed;
  cfg.train.seed = seed;
  cfg.train.epochs = epochs;
  cfg.train.base_lr = 1e-3;
  cfg.train.warmup_epochs = 3;
  cfg.out_dir = acceptance_dir(tag);
  cfg.model.backbone.height = 16;
  cfg.model.backbone.width = 16;
  cfg.model.backbone.hidden = {16};
  cfg.model.backbone.feature_dim = 8;
  cfg.model.cls.hidden = 8;
  cfg.cls.spec.dataset_size = 480;
  cfg.cls.spec.batch_size = 8;
  cfg.seg.spec.dataset_size = 144;
  cfg.seg.spec.batch_size = 2;
  cfg.det.spec.dataset_size = 144;
  cfg.det.spec.batch_size = 2;
  cfg.cls.augment.mode = AugmentDecl::Mode::None;
  cfg.seg.augment.mode = AugmentDecl::Mode::None;
  cfg.det.augment.mode = AugmentDecl::Mode::None;
  return cfg;
}

// Shares per logged iteration, keyed (epoch, iteration) -> task -> share.
std::map<std::pair<long, long>, std::map<std::string, double>> shares_by_iteration(
    const std::vector<StepTrace>& traces, bool postclip) {
  std::map<std::pair<long, long>, std::map<std::string, double>> out;
  std::map<std::pair<long, long>, double> totals;
  for (const StepTrace& t : traces) {
    totals[{t.epoch, t.iteration}] += postclip ? t.backbone_norm_postclip : t.backbone_grad_norm;
  }
  for (const StepTrace& t : traces) {
    const double total = totals[{t.epoch, t.iteration}];
    if (total > 0.0) {
      out[{t.epoch, t.iteration}][t.task] =
          (postclip ? t.backbone_norm_postclip : t.backbone_grad_norm) / total;
    }
  }
  return out;
}

// ---- criteria ---------------------------------------------------------------

Outcome criterion_exact_norm_and_collapse(int which) {
  // which 1: exact-norm law; which 2: composite collapse. Same 1000 triples.
  Outcome o{which, which == 1 ? "TBGC exact-norm law" : "composite-collapse law"};
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240 + which);
  double worst = 0.0;
  int counted = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    GradCase c = random_grad_case(rng);
    if (backbone_grad_norm(c.grads, c.store) < 1e-9) continue;
    ++counted;
    ClipConfig cfg;
    cfg.max_norm = c.max_norm;
    ClipResult r = tbgc_clip(TaskGradient{"t", c.grads}, c.store, cfg);

    if (which == 1) {
      const double bn = backbone_grad_norm(r.grads, c.store);
      worst = std::max(worst, std::fabs(bn - c.max_norm) / c.max_norm);
    } else {
      const double factor = c.max_norm / backbone_grad_norm(c.grads, c.store);
      for (const auto& [name, g] : c.grads) {
        const Tensor& out = r.grads.at(name);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double want = g[i] * factor;
          const double denom = std::max({std::fabs(want), std::fabs(out[i]), 1e-300});
          worst = std::max(worst, std::fabs(want - out[i]) / denom);
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  const double tol = which == 1 ? 1e-10 : 1e-12;
  o.pass = counted >= 990 && worst < tol && secs < 1.0;
  o.detail = fmt("%d triples, worst rel err %.2e (tol %.0e), %.2fs", counted, worst, tol, secs);
  return o;
}

Outcome criterion_scale_invariance() {
  Outcome o{3, "positive-scale invariance"};
  Rng rng(333);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    GradCase c = random_grad_case(rng);
    if (backbone_grad_norm(c.grads, c.store) < 1e-9) continue;
    ClipConfig cfg;
    cfg.max_norm = c.max_norm;
    ClipResult base = tbgc_clip(TaskGradient{"t", c.grads}, c.store, cfg);
    for (double scale : {1e-6, 1.0, 1e6}) {
      GradMap scaled = c.grads;
      for (auto& [name, g] : scaled) {
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= scale;
      }
      ClipResult r = tbgc_clip(TaskGradient{"t", std::move(scaled)}, c.store, cfg);
      for (const auto& [name, g] : base.grads) {
        const Tensor& out = r.grads.at(name);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double denom = std::max({std::fabs(g[i]), std::fabs(out[i]), 1e-300});
          worst = std::max(worst, std::fabs(g[i] - out[i]) / denom);
        }
      }
    }
  }
  o.pass = worst < 1e-10;
  o.detail = fmt("c in {1e-6, 1, 1e6}, worst rel err %.2e (tol 1e-10)", worst);
  return o;
}

Outcome criterion_gradcheck() {
  Outcome o{4, "finite-difference gradient correctness"};
  const auto t0 = std::chrono::steady_clock::now();
  auto reports = run_gradcheck(50, 424242);
  const double secs = seconds_since(t0);
  bool pass = secs < 30.0;
  double worst = 0.0;
  for (const GradCheckReport& r : reports) {
    pass = pass && r.pass;
    worst = std::max(worst, r.max_rel_err);
  }
  o.pass = pass;
  o.detail = fmt("%zu losses, >=50 instances each, worst rel err %.2e (tol 1e-4), %.1fs", reports.size(),
                 worst, secs);
  return o;
}

Outcome criterion_one_step_oracle() {
  Outcome o{5, "one-step oracle equivalence"};
  double worst = 0.0;
  for (ClipMode mode : {ClipMode::Vanilla, ClipMode::TBGC, ClipMode::TBGCStar}) {
    TinySetup setup;
    TrainConfig cfg;
    cfg.clip.mode = mode;
    cfg.clip.max_norm = 0.1;
    cfg.weight_decay = 1e-4;
    cfg.backbone_lr_factor = 0.1;
    const double lr = 1e-2;

    // scripted reference on flat arrays
    auto ga = setup.grads_a();
    auto gb = setup.grads_b();
    auto scale_map = [](std::map<std::string, std::vector<double>>& m, double f) {
      for (auto& [k, v] : m) {
        for (double& x : v) x *= f;
      }
    };
    if (mode == ClipMode::TBGC) {
      scale_map(ga, cfg.clip.max_norm / flat_norm(ga, true));
      scale_map(gb, cfg.clip.max_norm / flat_norm(gb, true));
    } else if (mode == ClipMode::TBGCStar) {
      scale_map(ga, cfg.clip.max_norm / flat_norm(ga, false));
      scale_map(gb, cfg.clip.max_norm / flat_norm(gb, false));
    }
    std::map<std::string, std::vector<double>> total;
    for (const auto* part : {&ga, &gb}) {
      for (const auto& [name, v] : *part) {
        auto& acc = total[name];
        if (acc.empty()) acc.assign(v.size(), 0.0);
        for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
      }
    }
    if (mode == ClipMode::Vanilla) scale_map(total, cfg.clip.max_norm / flat_norm(total, false));

    std::map<std::string, std::vector<double>> expect;
    for (const std::string& name : setup.store.names()) {
      const Tensor& p = setup.store.value(name);
      const double glr = setup.store.role(name).is_backbone() ? cfg.backbone_lr_factor * lr : lr;
      std::vector<double> out(p.numel());
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double g = total.at(name)[i];
        const double mhat = (1.0 - cfg.adamw.beta1) * g / (1.0 - cfg.adamw.beta1);
        const double vhat = (1.0 - cfg.adamw.beta2) * g * g / (1.0 - cfg.adamw.beta2);
        out[i] = p[i] - glr * mhat / (std::sqrt(vhat) + cfg.adamw.eps) - glr * cfg.weight_decay * p[i];
      }
      expect[name] = std::move(out);
    }

    OptState opt;
    GradRecorder rec(setup.store);
    multitask_step(setup.store, setup.tasks(), {Batch{}, Batch{}}, cfg, opt, rec, lr);

    for (const std::string& name : setup.store.names()) {
      for (std::size_t i = 0; i < setup.store.value(name).numel(); ++i) {
        worst = std::max(worst, std::fabs(setup.store.value(name)[i] - expect.at(name)[i]));
      }
    }
  }
  o.pass = worst <= 1e-12;
  o.detail = fmt("7-parameter model, 3 modes, worst elementwise diff %.2e (tol 1e-12)", worst);
  return o;
}

Outcome criterion_equal_influence() {
  Outcome o{6, "equal-influence experiment"};
  const auto t0 = std::chrono::steady_clock::now();

  ExperimentConfig tbgc_cfg = suite_config(17, 20, "equal_influence_tbgc");
  tbgc_cfg.train.clip.mode = ClipMode::TBGC;
  std::vector<StepTrace> tbgc_traces;
  run_experiment(tbgc_cfg, &tbgc_traces);

  ExperimentConfig van_cfg = suite_config(17, 20, "equal_influence_vanilla");
  van_cfg.train.clip.mode = ClipMode::Vanilla;
  std::vector<StepTrace> van_traces;
  run_experiment(van_cfg, &van_traces);

  // TBGC: every post-clip share is 1/3 within 1e-3
  auto tbgc_shares = shares_by_iteration(tbgc_traces, true);
  double worst_dev = 0.0;
  bool tbgc_ok = !tbgc_shares.empty();
  for (const auto& [key, shares] : tbgc_shares) {
    if (shares.size() != 3) {
      tbgc_ok = false;
      break;
    }
    for (const auto& [task, share] : shares) worst_dev = std::max(worst_dev, std::fabs(share - 1.0 / 3.0));
  }
  tbgc_ok = tbgc_ok && worst_dev <= 1e-3;

  // vanilla: the dominant task's pre-clip share exceeds 0.5 in >= 90% of
  // logged iterations
  auto van_shares = shares_by_iteration(van_traces, false);
  long dominated = 0;
  for (const auto& [key, shares] : van_shares) {
    double top = 0.0;
    for (const auto& [task, share] : shares) top = std::max(top, share);
    if (top > 0.5) ++dominated;
  }
  const double frac = van_shares.empty() ? 0.0 : static_cast<double>(dominated) / van_shares.size();
  const double secs = seconds_since(t0);

  o.pass = tbgc_ok && frac >= 0.9 && secs < 300.0;
  o.detail = fmt("TBGC worst |share-1/3| %.2e (tol 1e-3); vanilla dominance %.0f%% of %zu iters (need 90%%); %.0fs",
                 worst_dev, 100.0 * frac, van_shares.size(), secs);
  return o;
}

Outcome criterion_directional_ablation() {
  Outcome o{7, "directional ablation over seeds"};
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentConfig tb = suite_config(seed, 30, "dir_tbgc_" + std::to_string(seed));
    tb.train.clip.mode = ClipMode::TBGC;
    RunReport rt = run_experiment(tb);

    ExperimentConfig va = suite_config(seed, 30, "dir_vanilla_" + std::to_string(seed));
    va.train.clip.mode = ClipMode::Vanilla;
    RunReport rv = run_experiment(va);

    auto worst = [](const RunReport& r) {
      double w = 1e300;
      for (const auto& [id, v] : r.per_task) w = std::min(w, v);
      return w;
    };
    const double wt = worst(rt), wv = worst(rv);
    if (wt >= wv) ++wins;
    per_seed += fmt("%s%.3f/%.3f", per_seed.empty() ? "" : " ", wt, wv);
  }
  const double secs = seconds_since(t0);
  o.pass = wins >= 4 && secs < 1800.0;
  o.detail = fmt("worst-task TBGC/vanilla per seed: %s; TBGC >= vanilla in %d/5; %.0fs",
                 per_seed.c_str(), wins, secs);
  return o;
}

Outcome criterion_memory_contract() {
  Outcome o{8, "computation-graph release memory contract"};
  ExperimentConfig cfg = ExperimentConfig::defaults();
  cfg.train.epochs = 10; // only used for pipeline scheduling here
  ParamStore store = init_params(cfg.model, 5);

  Rng rng(99);
  auto random_images = [&](std::size_t n) {
    Tensor t({n, cfg.model.backbone.height, cfg.model.backbone.width, cfg.model.backbone.channels});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.0, 1.0);
    return t;
  };

  Batch cls_b, seg_b, det_b;
  cls_b.images = random_images(8);
  cls_b.classes.assign(8, 1);
  seg_b.images = random_images(2);
  seg_b.pixels.assign(2 * 32 * 32, 2);
  det_b.images = random_images(2);
  det_b.boxes = Tensor({2, 4}, {0.4, 0.4, 0.2, 0.2, 0.6, 0.6, 0.25, 0.25});

  const ModelConfig model = cfg.model;
  std::vector<TaskDef> tasks{
      {kTaskCls, [model](Tape& t, const ParamStore& s, const Batch& b) { return cls_task_loss(t, s, model, b); }},
      {kTaskSeg, [model](Tape& t, const ParamStore& s, const Batch& b) { return seg_task_loss(t, s, model, b); }},
      {kTaskDet, [model](Tape& t, const ParamStore& s, const Batch& b) { return det_task_loss(t, s, model, b); }}};
  std::vector<Batch> batches{cls_b, seg_b, det_b};

  long max_single = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    ActivationCounter::reset_peak();
    const long base = ActivationCounter::live();
    Tape tape;
    Var loss = tasks[i].loss(tape, store, batches[i]);
    GradMap g = std::move(tape).backward(loss);
    (void)g;
    max_single = std::max(max_single, ActivationCounter::peak() - base);
    if (ActivationCounter::live() != base) {
      o.detail = "activations leaked after single-task backward";
      return o;
    }
  }

  TrainConfig tc;
  tc.clip.mode = ClipMode::TBGC;
  OptState opt;
  GradRecorder rec(store);
  ActivationCounter::reset_peak();
  const long base = ActivationCounter::live();
  multitask_step(store, tasks, batches, tc, opt, rec, 1e-4);
  const long multitask_peak = ActivationCounter::peak() - base;

  o.pass = multitask_peak <= max_single && ActivationCounter::live() == base;
  o.detail = fmt("peak live activations: 3-task step %ld vs max single task %ld", multitask_peak,
                 max_single);
  return o;
}

Outcome criterion_trace_fidelity() {
  Outcome o{9, "trace fidelity over 100 epochs"};
  ExperimentConfig cfg = ExperimentConfig::defaults();
  cfg.seed = 23;
  cfg.train.seed = 23;
  cfg.train.epochs = 100;
  cfg.out_dir = acceptance_dir("trace_fidelity");
  cfg.model.backbone.height = 8;
  cfg.model.backbone.width = 8;
  cfg.model.backbone.hidden = {16};
  cfg.model.backbone.feature_dim = 8;
  cfg.model.cls.hidden = 8;
  cfg.cls.spec.dataset_size = 96;
  cfg.cls.spec.batch_size = 8;
  cfg.seg.spec.dataset_size = 24;
  cfg.seg.spec.batch_size = 2;
  cfg.det.spec.dataset_size = 24;
  cfg.det.spec.batch_size = 2;

  RunReport report = run_experiment(cfg);
  auto rows = parse_trace_csv_file(cfg.out_dir + "/trace.csv");

  std::map<std::string, long> per_task;
  bool finite = true;
  for (const StepTrace& r : rows) {
    per_task[r.task] += 1;
    finite = finite && std::isfinite(r.backbone_grad_norm) && std::isfinite(r.total_grad_norm) &&
             std::isfinite(r.loss) && r.backbone_grad_norm >= 0.0;
  }
  o.pass = finite && per_task.size() == 3 && report.trace_rows_per_task == 900;
  for (const auto& [id, n] : per_task) o.pass = o.pass && n == 900;
  o.detail = fmt("rows cls/seg/det = %ld/%ld/%ld (want 900 each), all parseable and finite",
                 per_task["cls"], per_task["seg"], per_task["det"]);
  return o;
}

Outcome criterion_augmentation_laws() {
  Outcome o{10, "augmentation laws"};
  bool pass = true;
  std::string why;

  // double-strong branch construction fails
  try {
    AugBranch bad({{AugKind::Mosaic}, {AugKind::MixUp}});
    pass = false;
    why += "double-strong branch accepted; ";
  } catch (const MultipleStrongOps&) {
  }

  // empirical branch frequency within 4 sigma over 1e4 draws
  MultiBranchPipeline p;
  p.branches.emplace_back(std::vector<AugOp>{{AugKind::HFlip}});
  p.branches.emplace_back(std::vector<AugOp>{{AugKind::Noise}});
  p.branches.emplace_back(std::vector<AugOp>{{AugKind::Rotate}});
  p.start_probs = {0.6, 0.3, 0.1};
  p.end_probs = {0.6, 0.3, 0.1};
  p.total_epochs = 10;
  Rng rng(4242);
  Sample s;
  s.image = Tensor({8, 8, 1});
  for (std::size_t i = 0; i < s.image.numel(); ++i) s.image[i] = rng.uniform();
  const int n = 10000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < n; ++i) counts[apply(p, s, {}, 3, rng).branch_index] += 1;
  for (std::size_t b = 0; b < 3; ++b) {
    const double prob = p.start_probs[b];
    const double bound = 4.0 * std::sqrt(prob * (1 - prob) / n);
    const double freq = static_cast<double>(counts[b]) / n;
    if (std::fabs(freq - prob) >= bound) {
      pass = false;
      why += fmt("branch %zu freq %.4f outside 4 sigma of %.1f; ", b, freq, prob);
    }
  }

  // involution identities, bit-exact on generator-produced samples (their
  // box coordinates are pixel fractions of a power-of-two image size, so the
  // reflection arithmetic is exact)
  BackboneConfig geom;
  geom.height = 16;
  geom.width = 16;
  Dataset det_data = generate_dataset(TaskSpec{kTaskDet, 16, 2, 1.0, 8}, geom, 31);
  Dataset seg_data = generate_dataset(TaskSpec{kTaskSeg, 16, 2, 1.0, 8}, geom, 32);
  for (const Dataset* ds : {&det_data, &seg_data}) {
    for (const Sample& r : ds->samples) {
      Sample ff = hflip(hflip(r));
      const bool mask_same = !r.mask || *ff.mask == *r.mask;
      const bool box_same = !r.box || (ff.box->cx == r.box->cx && ff.box->cy == r.box->cy &&
                                       ff.box->w == r.box->w && ff.box->h == r.box->h);
      if (ff.image.vec() != r.image.vec() || !mask_same || !box_same) {
        pass = false;
        why += "hflip involution broke; ";
        break;
      }
      Sample r4 = rotate90(r, 4);
      const bool mask4 = !r.mask || *r4.mask == *r.mask;
      const bool box4 = !r.box || (r4.box->cx == r.box->cx && r4.box->cy == r.box->cy &&
                                   r4.box->w == r.box->w && r4.box->h == r.box->h);
      if (r4.image.vec() != r.image.vec() || !mask4 || !box4) {
        pass = false;
        why += "rotate-360 identity broke; ";
        break;
      }
    }
  }

  // mixup endpoint identities, bit-exact
  Sample m1 = det_data.samples[0], m2 = det_data.samples[1];
  m1.class_label = 1;
  m2.class_label = 2;
  Sample at_one = mixup(m1, m2, 1.0);
  Sample at_zero = mixup(m1, m2, 0.0);
  if (at_one.image.vec() != m1.image.vec() || at_one.box->cx != m1.box->cx ||
      at_zero.image.vec() != m2.image.vec() || at_zero.box->cx != m2.box->cx) {
    pass = false;
    why += "mixup endpoints broke; ";
  }

  o.pass = pass;
  o.detail = pass ? fmt("construction failure, 4-sigma frequencies (n=10^4), bit-exact identities")
                  : why;
  return o;
}

Outcome criterion_schedule_anchors() {
  Outcome o{11, "learning-rate schedule anchors"};
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.base_lr = 1e-4;
  cfg.warmup_epochs = 5;
  cfg.warmup_ratio = 0.001;
  const long spe = 32;
  const long warm = cfg.warmup_epochs * spe;

  const double lr0 = lr_at(0, spe, cfg);
  const double lr_warm_end = lr_at(warm, spe, cfg);
  const double step_before = lr_at(warm - 1, spe, cfg);
  const double expected_before =
      cfg.base_lr * (cfg.warmup_ratio + (1.0 - cfg.warmup_ratio) * (warm - 1.0) / warm);

  const bool anchor0 = std::fabs(lr0 - 1e-7) <= 1e-15 * 1e-7 + 1e-22;
  const bool anchor_end = std::fabs(lr_warm_end - 1e-4) <= 1e-15;
  const bool continuous = std::fabs(step_before - expected_before) <= 1e-18 &&
                          std::fabs(lr_warm_end - cfg.base_lr) <= 1e-15;

  o.pass = anchor0 && anchor_end && continuous;
  o.detail = fmt("lr(0)=%.3e (want 1e-7), lr(warmup end)=%.3e (want 1e-4), boundary gap %.1e",
                 lr0, lr_warm_end, std::fabs(lr_warm_end - cfg.base_lr));
  return o;
}

} // namespace

int main() {
  std::vector<std::function<Outcome()>> criteria{
      [] { return criterion_exact_norm_and_collapse(1); },
      [] { return criterion_exact_norm_and_collapse(2); },
      criterion_scale_invariance,
      criterion_gradcheck,
      criterion_one_step_oracle,
      criterion_equal_influence,
      criterion_directional_ablation,
      criterion_memory_contract,
      criterion_trace_fidelity,
      criterion_augmentation_laws,
      criterion_schedule_anchors,
  };

  int failures = 0;
  for (auto& run : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
      o.name = o.name.empty() ? "criterion crashed" : o.name;
    }
    std::printf("[%s] criterion %2d: %s :: %s\n", o.pass ? "PASS" : "FAIL", o.id, o.name.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  std::printf("%d/%zu acceptance criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures;
}
