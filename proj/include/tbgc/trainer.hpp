#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tbgc/clip.hpp"
#include "tbgc/model.hpp"
#include "tbgc/optim.hpp"
#include "tbgc/param_store.hpp"

namespace tbgc {

struct TrainConfig {
  long epochs = 100;
  double base_lr = 1e-4;
  double weight_decay = 1e-4;
  long warmup_epochs = 5;
  double warmup_ratio = 0.001;
  double backbone_lr_factor = 0.1;
  ClipConfig clip;
  AdamWConfig adamw;
  long log_points_per_epoch = 9;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs <= 0) throw InvalidConfig("train.epochs must be positive");
    if (warmup_epochs < 0 || warmup_epochs >= epochs) {
      throw InvalidConfig("train.warmup_epochs must be in [0, epochs)");
    }
    if (!(base_lr > 0.0)) throw InvalidConfig("train.base_lr must be positive");
    if (warmup_ratio <= 0.0 || warmup_ratio > 1.0) throw InvalidConfig("train.warmup_ratio must be in (0, 1]");
    if (!(backbone_lr_factor > 0.0)) throw InvalidConfig("train.backbone_lr_factor must be positive");
    if (weight_decay < 0.0) throw InvalidConfig("train.weight_decay must be nonnegative");
    if (!(clip.max_norm > 0.0)) throw InvalidConfig("clip.max_norm must be positive");
  }
};

// Linear warmup from warmup_ratio * base to base over the warmup epochs, then
// cosine decay to zero over the remaining epochs. Continuous at the boundary.
inline double lr_at(long global_step, long steps_per_epoch, const TrainConfig& cfg) {
  if (global_step < 0) throw Error("negative global step");
  const long warmup_steps = cfg.warmup_epochs * steps_per_epoch;
  const long total_steps = cfg.epochs * steps_per_epoch;
  if (global_step < warmup_steps) {
    const double f = static_cast<double>(global_step) / static_cast<double>(warmup_steps);
    return cfg.base_lr * (cfg.warmup_ratio + (1.0 - cfg.warmup_ratio) * f);
  }
  const long span = total_steps - warmup_steps;
  if (span <= 0) return cfg.base_lr;
  double progress = static_cast<double>(global_step - warmup_steps) / static_cast<double>(span);
  if (progress > 1.0) progress = 1.0;
  return cfg.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Per-iteration gradient accumulator aligned with a store. Holds zeros
// between iterations; accumulate() adds a clipped task gradient, take() hands
// out the sum and re-zeros.
class GradRecorder {
public:
  explicit GradRecorder(const ParamStore& store) {
    for (const std::string& name : store.names()) {
      sums_.emplace(name, Tensor(store.value(name).shape()));
    }
  }

  void accumulate(const GradMap& grads) {
    for (const auto& [name, g] : grads) {
      auto it = sums_.find(name);
      if (it == sums_.end()) throw AlignmentError("recorder has no slot for '" + name + "'");
      Tensor& acc = it->second;
      if (!acc.same_shape(g)) throw AlignmentError("recorder slot shape for '" + name + "'");
      for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
      touched_.insert(name);
    }
  }

  bool is_zero() const {
    for (const auto& [name, t] : sums_) {
      for (std::size_t i = 0; i < t.numel(); ++i) {
        if (t[i] != 0.0) return false;
      }
    }
    return true;
  }

  // Sum of everything accumulated since the last take(), limited to the
  // entries that actually received gradient. Leaves the recorder zeroed.
  GradMap take() {
    GradMap out;
    for (const std::string& name : touched_) {
      Tensor& acc = sums_.at(name);
      out.emplace(name, acc);
      for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] = 0.0;
    }
    touched_.clear();
    return out;
  }

private:
  std::map<std::string, Tensor> sums_;
  std::set<std::string> touched_;
};

struct TaskDef {
  std::string id;
  std::function<Var(Tape&, const ParamStore&, const Batch&)> loss;
};

// One row of norm telemetry. The CSV schema carries the pre-clip norms; the
// post-clip backbone norm is kept in memory for the ablation reports.
struct StepTrace {
  long epoch = 0;
  long iteration = 0;
  std::string task;
  double backbone_grad_norm = 0.0; // pre-clip
  double total_grad_norm = 0.0;    // pre-clip
  double loss = 0.0;
  double backbone_norm_postclip = 0.0;
  bool skipped = false;
};

struct StepResult {
  std::vector<StepTrace> traces;
  long skipped_tasks = 0;
  long zero_grad_clips = 0;
};

// One multi-task iteration: per task forward, backward (tape released),
// per-task clip, accumulate into the recorder; then a single AdamW step from
// the recorder sum. Under Vanilla mode the per-task stage is a pass-through
// and the one clip is applied to the accumulated sum.
inline StepResult multitask_step(ParamStore& store, const std::vector<TaskDef>& tasks,
                                 const std::vector<Batch>& batches, const TrainConfig& cfg,
                                 OptState& opt, GradRecorder& recorder, double lr,
                                 long epoch = 0, long iteration = 0) {
  if (tasks.size() != batches.size()) throw Error("one batch per task required");
  if (!recorder.is_zero()) throw Error("recorder not zeroed at iteration start");

  StepResult result;
  result.traces.reserve(tasks.size());

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    StepTrace trace;
    trace.epoch = epoch;
    trace.iteration = iteration;
    trace.task = tasks[t].id;

    GradMap raw;
    try {
      Tape tape;
      Var loss = tasks[t].loss(tape, store, batches[t]);
      trace.loss = loss.value().scalar_value();
      raw = std::move(tape).backward(loss); // releases the graph
    } catch (const DegenerateFeature&) {
      // a collapsed feature row poisons only this task's step; skip it like a
      // zero-gradient task and keep training
      trace.skipped = true;
      ++result.skipped_tasks;
      result.traces.push_back(std::move(trace));
      continue;
    }
    trace.total_grad_norm = grad_norm(raw);
    trace.backbone_grad_norm = backbone_grad_norm(raw, store);

    TaskGradient tg{tasks[t].id, std::move(raw)};
    switch (cfg.clip.mode) {
      case ClipMode::Vanilla: {
        // the vanilla clip operates on the overall gradient after accumulation
        recorder.accumulate(tg.grads);
        trace.backbone_norm_postclip = trace.backbone_grad_norm; // scaled below
        break;
      }
      case ClipMode::TBGC: {
        ClipResult c = tbgc_clip(std::move(tg), store, cfg.clip);
        if (c.skipped) {
          trace.skipped = true;
          ++result.skipped_tasks;
        } else {
          trace.backbone_norm_postclip = backbone_grad_norm(c.grads, store);
          recorder.accumulate(c.grads);
        }
        break;
      }
      case ClipMode::TBGCStar: {
        const bool zero = grad_norm(tg.grads) < cfg.clip.zero_eps;
        if (zero) {
          trace.skipped = true;
          ++result.skipped_tasks;
        } else {
          ClipResult c = tbgc_star_clip(std::move(tg), cfg.clip);
          trace.backbone_norm_postclip = backbone_grad_norm(c.grads, store);
          recorder.accumulate(c.grads);
        }
        break;
      }
    }
    result.traces.push_back(std::move(trace));
  }

  GradMap total = recorder.take();
  if (cfg.clip.mode == ClipMode::Vanilla) {
    const double in_norm = grad_norm(total);
    ClipResult c = vanilla_clip(std::move(total), cfg.clip);
    if (c.skipped) ++result.zero_grad_clips;
    total = std::move(c.grads);
    // Vanilla rescales the sum uniformly, so each task's post-clip backbone
    // contribution is its pre-clip norm times the common factor.
    double factor = 1.0;
    if (!c.skipped && in_norm > 0.0) factor = grad_norm(total) / in_norm;
    for (StepTrace& tr : result.traces) tr.backbone_norm_postclip = tr.backbone_grad_norm * factor;
  }
  adamw_update(store, total, opt, lr, cfg.weight_decay, cfg.adamw, cfg.backbone_lr_factor);
  return result;
}

// Iterations traced per epoch: all of them when there are few, otherwise
// `points` evenly spaced indices.
inline std::vector<long> logged_iterations(long iterations, long points) {
  std::vector<long> out;
  if (points <= 0 || iterations <= 0) return out;
  if (iterations <= points) {
    for (long i = 0; i < iterations; ++i) out.push_back(i);
    return out;
  }
  for (long k = 0; k < points; ++k) out.push_back(k * iterations / points);
  return out;
}

// A task wired for the training loop: loss, batch source, held-out metric.
struct TrainTask {
  TaskDef def;
  std::function<Batch(long epoch, long iteration)> next_batch;
  std::function<double(const ParamStore&)> evaluate; // optional
  long batches_per_epoch = 1;
};

struct TrainHooks {
  std::function<void(const StepTrace&)> on_trace;
  std::function<void(long epoch, const ParamStore&)> on_epoch_end;
};

struct EpochMetrics {
  long epoch = 0;
  std::map<std::string, double> per_task;
};

struct TrainSummary {
  std::vector<EpochMetrics> history;
  std::map<std::string, double> final_metrics;
  long skipped_tasks = 0;
  long zero_grad_clips = 0;
  long iterations_per_epoch = 0;
  long logged_per_task = 0;
};

// Runs the full schedule. Every task steps once per iteration; the epoch
// length is the longest task's batch count and shorter tasks cycle.
inline TrainSummary train(ParamStore& store, const std::vector<TrainTask>& tasks,
                          const TrainConfig& cfg, OptState& opt, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (tasks.empty()) throw Error("no tasks to train");

  long iterations = 1;
  for (const TrainTask& t : tasks) iterations = std::max(iterations, t.batches_per_epoch);
  const std::vector<long> log_at = logged_iterations(iterations, cfg.log_points_per_epoch);

  std::vector<TaskDef> defs;
  defs.reserve(tasks.size());
  for (const TrainTask& t : tasks) defs.push_back(t.def);

  GradRecorder recorder(store);
  TrainSummary summary;
  summary.iterations_per_epoch = iterations;
  summary.logged_per_task = static_cast<long>(log_at.size()) * cfg.epochs;

  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::size_t log_cursor = 0;
    for (long it = 0; it < iterations; ++it) {
      StepResult r;
      try {
        std::vector<Batch> batches;
        batches.reserve(tasks.size());
        for (const TrainTask& t : tasks) batches.push_back(t.next_batch(epoch, it));
        const double lr = lr_at(epoch * iterations + it, iterations, cfg);
        r = multitask_step(store, defs, batches, cfg, opt, recorder, lr, epoch, it);
      } catch (const Error& e) {
        throw Error("epoch " + std::to_string(epoch) + " iteration " + std::to_string(it) + ": " +
                    e.what());
      }
      summary.skipped_tasks += r.skipped_tasks;
      summary.zero_grad_clips += r.zero_grad_clips;
      const bool log_this = log_cursor < log_at.size() && log_at[log_cursor] == it;
      if (log_this) {
        ++log_cursor;
        if (hooks.on_trace) {
          for (const StepTrace& tr : r.traces) hooks.on_trace(tr);
        }
      }
    }
    EpochMetrics em;
    em.epoch = epoch;
    for (const TrainTask& t : tasks) {
      if (t.evaluate) em.per_task[t.def.id] = t.evaluate(store);
    }
    if (!em.per_task.empty()) summary.history.push_back(em);
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, store);
  }
  if (!summary.history.empty()) summary.final_metrics = summary.history.back().per_task;
  return summary;
}

// ---- norm-trace CSV --------------------------------------------------------

inline constexpr const char* kTraceCsvHeader = "epoch,iteration,task,backbone_grad_norm,total_grad_norm,loss";

inline std::string trace_csv_row(const StepTrace& t) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%ld,%ld,%s,%.17g,%.17g,%.17g", t.epoch, t.iteration,
                t.task.c_str(), t.backbone_grad_norm, t.total_grad_norm, t.loss);
  return buf;
}

// Streams logged StepTraces to the pinned CSV schema, LF line endings.
class TraceWriter {
public:
  explicit TraceWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open trace file '" + path + "'");
    out_ << kTraceCsvHeader << "\n";
  }

  void write(const StepTrace& t) {
    out_ << trace_csv_row(t) << "\n";
    ++rows_;
  }

  long rows() const { return rows_; }

private:
  std::ofstream out_;
  long rows_ = 0;
};

inline std::vector<StepTrace> parse_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty trace csv");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceCsvHeader) throw IoError("bad trace header: '" + line + "'");
  std::vector<StepTrace> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    StepTrace t;
    auto next = [&]() {
      if (!std::getline(ls, field, ',')) throw IoError("short trace row: '" + line + "'");
      return field;
    };
    t.epoch = std::stol(next());
    t.iteration = std::stol(next());
    t.task = next();
    t.backbone_grad_norm = std::stod(next());
    t.total_grad_norm = std::stod(next());
    t.loss = std::stod(next());
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<StepTrace> parse_trace_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trace file '" + path + "'");
  return parse_trace_csv(in);
}

} // namespace tbgc
