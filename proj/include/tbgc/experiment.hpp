#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbgc/checkpoint.hpp"
#include "tbgc/config.hpp"
#include "tbgc/dataset.hpp"
#include "tbgc/trainer.hpp"

namespace tbgc {

struct WarningCounters {
  long skipped_tasks = 0;
  long zero_grad_clips = 0;
  long rejected_samples = 0;

  long total() const { return skipped_tasks + zero_grad_clips + rejected_samples; }
};

// Outcome of one full run. overall is always the arithmetic mean of the
// per-task metrics.
struct RunReport {
  std::map<std::string, double> per_task;
  double overall = 0.0;
  std::vector<EpochMetrics> history;
  WarningCounters warnings;
  std::string config_echo;
  double wall_clock_sec = 0.0;
  long iterations_per_epoch = 0;
  long trace_rows_per_task = 0;
};

namespace detail {

inline std::uint64_t task_tag(const std::string& id) {
  return std::hash<std::string>{}(id);
}

// Batch source for one task: owns the dataset, the split, and the augment
// pipeline; hands out deterministic augmented batches keyed by (epoch, iter).
class TaskLoader {
public:
  TaskLoader(const TaskConfig& task, const ModelConfig& model, std::uint64_t seed, long total_epochs,
             double train_fraction, WarningCounters* warnings)
      : task_(task), model_(model), seed_(seed), warnings_(warnings) {
    data_ = generate_dataset(task.spec, model.backbone, seed);
    SplitIndices split = train_eval_split(data_.samples.size(), train_fraction,
                                          Rng::derive(seed, {0x59117, task_tag(task.spec.id)}));
    train_idx_ = std::move(split.train);
    for (std::size_t i : split.eval) eval_samples_.push_back(data_.samples[i]);

    if (task.augment.mode == AugmentDecl::Mode::MultiBranch) {
      pipeline_ = std::make_unique<MultiBranchPipeline>(task.augment.build_pipeline(total_epochs));
      for (const AugBranch& b : pipeline_->branches) {
        partners_needed_ = std::max(partners_needed_, b.partners_needed());
      }
    } else if (task.augment.mode == AugmentDecl::Mode::Parallel) {
      parallel_ = std::make_unique<AugBranch>(task.augment.build_parallel_branch());
      partners_needed_ = parallel_->partners_needed();
    }
  }

  long batches_per_epoch() const {
    return static_cast<long>((train_idx_.size() + task_.spec.batch_size - 1) / task_.spec.batch_size);
  }

  const std::vector<Sample>& eval_samples() const { return eval_samples_; }
  const Dataset& dataset() const { return data_; }

  Batch next_batch(long epoch, long iter) {
    if (epoch != order_epoch_) {
      order_ = train_idx_;
      Rng rng(Rng::derive(seed_, {0x0bd3b, task_tag(task_.spec.id), static_cast<std::uint64_t>(epoch)}));
      shuffle(order_, rng);
      order_epoch_ = epoch;
    }
    Rng rng(Rng::derive(seed_, {0xba7c4, task_tag(task_.spec.id), static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(iter)}));
    std::vector<Sample> picked;
    picked.reserve(task_.spec.batch_size);
    const std::size_t start = static_cast<std::size_t>(iter) * task_.spec.batch_size;
    for (std::size_t k = 0; k < task_.spec.batch_size; ++k) {
      const Sample& raw = data_.samples[order_[(start + k) % order_.size()]];
      picked.push_back(augmented(raw, epoch, rng));
    }
    return make_batch(picked, task_.spec.id, model_.backbone);
  }

  // Applies the configured strategy; a rejected sample is counted and falls
  // back to its untransformed original.
  Sample augmented(const Sample& raw, long epoch, Rng& rng) {
    try {
      if (pipeline_) {
        return apply(*pipeline_, raw, partners(rng), epoch, rng).sample;
      }
      if (parallel_) {
        return apply_branch(*parallel_, raw, task_.augment.params, partners(rng), rng).sample;
      }
    } catch (const SampleRejected&) {
      if (warnings_) ++warnings_->rejected_samples;
    }
    return raw;
  }

private:
  std::span<const Sample> partners(Rng& rng) {
    partner_buf_.clear();
    for (std::size_t i = 0; i < partners_needed_; ++i) {
      partner_buf_.push_back(data_.samples[train_idx_[rng.index(train_idx_.size())]]);
    }
    return partner_buf_;
  }

  TaskConfig task_;
  ModelConfig model_;
  std::uint64_t seed_;
  WarningCounters* warnings_;
  Dataset data_;
  std::vector<std::size_t> train_idx_;
  std::vector<Sample> eval_samples_;
  std::unique_ptr<MultiBranchPipeline> pipeline_;
  std::unique_ptr<AugBranch> parallel_;
  std::size_t partners_needed_ = 0;
  std::vector<std::size_t> order_;
  long order_epoch_ = -1;
  std::vector<Sample> partner_buf_;
};

inline double task_metric(const std::string& id, const ParamStore& store, const ModelConfig& model,
                          const std::vector<Sample>& eval_samples) {
  if (id == kTaskCls) return metric_top1(store, model, eval_samples);
  if (id == kTaskSeg) return metric_mean_iou(store, model, eval_samples);
  return metric_box_hit_rate(store, model, eval_samples);
}

inline Var scaled_task_loss(const std::string& id, double scale, Tape& tape, const ParamStore& store,
                            const ModelConfig& model, const Batch& batch) {
  Var raw = id == kTaskCls   ? cls_task_loss(tape, store, model, batch)
            : id == kTaskSeg ? seg_task_loss(tape, store, model, batch)
                             : det_task_loss(tape, store, model, batch);
  return scale == 1.0 ? raw : scalar_mul(raw, scale);
}

} // namespace detail

// Trains per the config, evaluates each epoch on the held-out split, and
// writes trace.csv, report.json, config.toml and the final checkpoint into
// out_dir. Captured traces include the in-memory post-clip norms.
inline RunReport run_experiment(const ExperimentConfig& cfg, std::vector<StepTrace>* capture = nullptr) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const auto t0 = std::chrono::steady_clock::now();

  ParamStore store = init_params(cfg.model, Rng::derive(cfg.seed, {0x12171}));
  WarningCounters warnings;

  std::vector<std::shared_ptr<detail::TaskLoader>> loaders;
  std::vector<TrainTask> tasks;
  for (const TaskConfig* tc : cfg.tasks()) {
    auto loader = std::make_shared<detail::TaskLoader>(*tc, cfg.model, cfg.seed, cfg.train.epochs,
                                                       cfg.train_fraction, &warnings);
    TrainTask tt;
    tt.def.id = tc->spec.id;
    const double scale = tc->spec.loss_scale;
    const std::string id = tc->spec.id;
    const ModelConfig model = cfg.model;
    tt.def.loss = [id, scale, model](Tape& t, const ParamStore& s, const Batch& b) {
      return detail::scaled_task_loss(id, scale, t, s, model, b);
    };
    tt.next_batch = [loader](long epoch, long iter) { return loader->next_batch(epoch, iter); };
    tt.evaluate = [loader, id, model](const ParamStore& s) {
      return detail::task_metric(id, s, model, loader->eval_samples());
    };
    tt.batches_per_epoch = loader->batches_per_epoch();
    loaders.push_back(std::move(loader));
    tasks.push_back(std::move(tt));
  }

  TraceWriter trace_writer((fs::path(cfg.out_dir) / "trace.csv").string());
  TrainHooks hooks;
  hooks.on_trace = [&](const StepTrace& tr) {
    trace_writer.write(tr);
    if (capture) capture->push_back(tr);
  };
  hooks.on_epoch_end = [&](long epoch, const ParamStore& s) {
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(s, (fs::path(cfg.out_dir) / ("checkpoint_epoch_" + std::to_string(epoch + 1) + ".ckpt")).string());
    }
  };

  OptState opt;
  TrainSummary summary = train(store, tasks, cfg.train, opt, hooks);
  warnings.skipped_tasks = summary.skipped_tasks;
  warnings.zero_grad_clips = summary.zero_grad_clips;

  save_checkpoint(store, (fs::path(cfg.out_dir) / "checkpoint.ckpt").string());

  RunReport report;
  report.per_task = summary.final_metrics;
  double sum = 0.0;
  for (const auto& [id, v] : report.per_task) sum += v;
  report.overall = report.per_task.empty() ? 0.0 : sum / static_cast<double>(report.per_task.size());
  report.history = summary.history;
  report.warnings = warnings;
  report.config_echo = cfg.serialize();
  report.iterations_per_epoch = summary.iterations_per_epoch;
  report.trace_rows_per_task = summary.logged_per_task;
  report.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  {
    std::ofstream cfg_out(fs::path(cfg.out_dir) / "config.toml", std::ios::binary);
    cfg_out << report.config_echo;
  }
  {
    nlohmann::json j;
    j["per_task"] = report.per_task;
    j["overall"] = report.overall;
    nlohmann::json hist = nlohmann::json::array();
    for (const EpochMetrics& em : report.history) {
      nlohmann::json row;
      row["epoch"] = em.epoch;
      for (const auto& [id, v] : em.per_task) row[id] = v;
      hist.push_back(row);
    }
    j["history"] = hist;
    j["warnings"] = {{"skipped_tasks", warnings.skipped_tasks},
                     {"zero_grad_clips", warnings.zero_grad_clips},
                     {"rejected_samples", warnings.rejected_samples}};
    j["iterations_per_epoch"] = report.iterations_per_epoch;
    j["trace_rows_per_task"] = report.trace_rows_per_task;
    j["wall_clock_sec"] = report.wall_clock_sec;
    j["config"] = report.config_echo;
    std::ofstream json_out(fs::path(cfg.out_dir) / "report.json", std::ios::binary);
    json_out << j.dump(2) << "\n";
  }
  return report;
}

// Mean per-task share of the backbone gradient norm across logged iterations.
// With postclip=true shares come from the post-clip contributions (constant
// 1/3 under TBGC by construction); otherwise from the raw pre-clip norms.
inline std::map<std::string, double> mean_backbone_shares(const std::vector<StepTrace>& traces,
                                                          bool postclip) {
  std::map<std::pair<long, long>, std::vector<const StepTrace*>> by_iter;
  for (const StepTrace& t : traces) by_iter[{t.epoch, t.iteration}].push_back(&t);
  std::map<std::string, double> sums;
  long iters = 0;
  for (const auto& [key, rows] : by_iter) {
    double total = 0.0;
    for (const StepTrace* t : rows) total += postclip ? t->backbone_norm_postclip : t->backbone_grad_norm;
    if (total <= 0.0) continue;
    ++iters;
    for (const StepTrace* t : rows) {
      sums[t->task] += (postclip ? t->backbone_norm_postclip : t->backbone_grad_norm) / total;
    }
  }
  for (auto& [id, v] : sums) v /= static_cast<double>(iters == 0 ? 1 : iters);
  return sums;
}

struct ClipAblationRow {
  std::string method;
  double overall = 0.0;
  std::map<std::string, double> per_task;
  std::map<std::string, double> backbone_share;
};

struct ClipAblation {
  std::vector<ClipAblationRow> rows;
  std::string csv_path;
};

// Same data, same seed, three clip modes; the table mirrors the ablation
// layout (method, overall, det, seg, cls) plus the measured backbone shares.
inline ClipAblation compare_clip_modes(const ExperimentConfig& cfg,
                                       std::vector<std::vector<StepTrace>>* trace_capture = nullptr) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(cfg.out_dir);

  const std::vector<std::pair<ClipMode, std::string>> modes{
      {ClipMode::Vanilla, "vanilla"}, {ClipMode::TBGCStar, "TBGC*"}, {ClipMode::TBGC, "TBGC"}};

  ClipAblation out;
  for (const auto& [mode, label] : modes) {
    ExperimentConfig sub = cfg;
    sub.train.clip.mode = mode;
    sub.out_dir = (fs::path(cfg.out_dir) / ("clip_" + std::string(clip_mode_name(mode)))).string();
    std::vector<StepTrace> traces;
    RunReport report = run_experiment(sub, &traces);

    ClipAblationRow row;
    row.method = label;
    row.overall = report.overall;
    row.per_task = report.per_task;
    row.backbone_share = mean_backbone_shares(traces, /*postclip=*/true);
    out.rows.push_back(std::move(row));
    if (trace_capture) trace_capture->push_back(std::move(traces));
  }

  out.csv_path = (fs::path(cfg.out_dir) / "ablation_clip.csv").string();
  std::ofstream csv(out.csv_path, std::ios::binary);
  csv << "method,overall,det,seg,cls,share_det,share_seg,share_cls\n";
  char buf[256];
  for (const ClipAblationRow& r : out.rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.method.c_str(), r.overall,
                  r.per_task.at(kTaskDet), r.per_task.at(kTaskSeg), r.per_task.at(kTaskCls),
                  r.backbone_share.count(kTaskDet) ? r.backbone_share.at(kTaskDet) : 0.0,
                  r.backbone_share.count(kTaskSeg) ? r.backbone_share.at(kTaskSeg) : 0.0,
                  r.backbone_share.count(kTaskCls) ? r.backbone_share.at(kTaskCls) : 0.0);
    csv << buf << "\n";
  }
  return out;
}

struct AugAblationRow {
  std::string method;
  double overall = 0.0;
  std::map<std::string, double> per_task;
};

struct AugAblation {
  std::vector<AugAblationRow> rows;
  std::string csv_path;
};

// Parallel (all ops stacked) versus multi-branch routing, shared seed.
inline AugAblation compare_aug_modes(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(cfg.out_dir);

  auto with_mode = [&](AugmentDecl::Mode mode) {
    ExperimentConfig sub = cfg;
    for (TaskConfig* t : {&sub.cls, &sub.seg, &sub.det}) {
      if (t->augment.mode != AugmentDecl::Mode::None) t->augment.mode = mode;
    }
    return sub;
  };

  AugAblation out;
  const std::vector<std::pair<AugmentDecl::Mode, std::string>> modes{
      {AugmentDecl::Mode::Parallel, "parallel"}, {AugmentDecl::Mode::MultiBranch, "MultiBranch"}};
  for (const auto& [mode, label] : modes) {
    ExperimentConfig sub = with_mode(mode);
    sub.out_dir = (fs::path(cfg.out_dir) / ("aug_" + label)).string();
    RunReport report = run_experiment(sub);
    AugAblationRow row;
    row.method = label;
    row.overall = report.overall;
    row.per_task = report.per_task;
    out.rows.push_back(std::move(row));
  }

  out.csv_path = (fs::path(cfg.out_dir) / "ablation_aug.csv").string();
  std::ofstream csv(out.csv_path, std::ios::binary);
  csv << "method,overall,det,seg,cls\n";
  char buf[192];
  for (const AugAblationRow& r : out.rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f", r.method.c_str(), r.overall,
                  r.per_task.at(kTaskDet), r.per_task.at(kTaskSeg), r.per_task.at(kTaskCls));
    csv << buf << "\n";
  }
  return out;
}

// Grayscale image dump, plain PGM (P2). Values are linearly mapped from the
// image's own range.
inline void write_pgm(const Tensor& image, const std::string& path) {
  if (image.rank() != 3 || image.shape()[2] != 1) throw Error("write_pgm expects H x W x 1");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "'");
  const std::size_t h = image.shape()[0], w = image.shape()[1];
  double lo = image[0], hi = image[0];
  for (std::size_t i = 0; i < image.numel(); ++i) {
    lo = std::min(lo, image[i]);
    hi = std::max(hi, image[i]);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  out << "P2\n" << w << " " << h << "\n255\n";
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const int v = static_cast<int>(255.0 * (image[i * w + j] - lo) / span + 0.5);
      out << (j ? " " : "") << v;
    }
    out << "\n";
  }
}

// Dumps before/after sample pairs plus an op log for every task that has an
// augmentation strategy configured. Returns the number of pairs written.
inline long dump_aug_demo(const ExperimentConfig& cfg, std::size_t samples_per_task,
                          const std::string& out_dir) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "aug_log.txt", std::ios::binary);
  long written = 0;

  for (const TaskConfig* tc : cfg.tasks()) {
    if (tc->augment.mode == AugmentDecl::Mode::None) continue;
    Dataset data = generate_dataset(tc->spec, cfg.model.backbone, cfg.seed);
    Rng rng(Rng::derive(cfg.seed, {0xde60, detail::task_tag(tc->spec.id)}));

    std::unique_ptr<MultiBranchPipeline> pipeline;
    std::unique_ptr<AugBranch> parallel;
    std::size_t partners_needed = 0;
    if (tc->augment.mode == AugmentDecl::Mode::MultiBranch) {
      pipeline = std::make_unique<MultiBranchPipeline>(tc->augment.build_pipeline(cfg.train.epochs));
      for (const AugBranch& b : pipeline->branches) {
        partners_needed = std::max(partners_needed, b.partners_needed());
      }
    } else {
      parallel = std::make_unique<AugBranch>(tc->augment.build_parallel_branch());
      partners_needed = parallel->partners_needed();
    }

    for (std::size_t k = 0; k < samples_per_task && k < data.samples.size(); ++k) {
      const Sample& before = data.samples[k];
      std::vector<Sample> partners;
      for (std::size_t i = 0; i < partners_needed; ++i) {
        partners.push_back(data.samples[rng.index(data.samples.size())]);
      }

      char name[64];
      std::snprintf(name, sizeof name, "%s_%03zu", tc->spec.id.c_str(), k);
      write_pgm(before.image, (fs::path(out_dir) / (std::string(name) + "_before.pgm")).string());
      try {
        ApplyResult res = pipeline ? apply(*pipeline, before, partners, 0, rng)
                                   : apply_branch(*parallel, before, tc->augment.params, partners, rng);
        Sample after = resize_to(res.sample, cfg.model.backbone.height, cfg.model.backbone.width);
        write_pgm(after.image, (fs::path(out_dir) / (std::string(name) + "_after.pgm")).string());
        log << name << " branch=" << (pipeline ? std::to_string(res.branch_index) : "parallel") << " ops=";
        for (std::size_t i = 0; i < res.ops_applied.size(); ++i) log << (i ? "," : "") << res.ops_applied[i];
        log << "\n";
        ++written;
      } catch (const SampleRejected& e) {
        log << name << " rejected: " << e.what() << "\n";
        write_pgm(before.image, (fs::path(out_dir) / (std::string(name) + "_after.pgm")).string());
        ++written;
      }
    }
  }
  return written;
}

} // namespace tbgc
