// Command-line front end: train, compare-clip, compare-aug, aug-demo,
// gradcheck. Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tbgc/experiment.hpp"
#include "tbgc/gradcheck.hpp"

namespace {

struct Overrides {
  long seed = -1;
  std::string out_dir;
  long epochs = -1;
};

tbgc::ExperimentConfig load_config(const std::string& path, const Overrides& ov) {
  tbgc::ExperimentConfig cfg = tbgc::ExperimentConfig::load(path);
  if (ov.seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(ov.seed);
    cfg.train.seed = cfg.seed;
  }
  if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
  if (ov.epochs > 0) cfg.train.epochs = ov.epochs;
  cfg.validate();
  return cfg;
}

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--seed", ov.seed, "Override the config seed");
  cmd->add_option("--out-dir", ov.out_dir, "Override the output directory");
  cmd->add_option("--epochs", ov.epochs, "Override the epoch count");
}

void print_report(const tbgc::RunReport& r) {
  std::printf("overall %.4f", r.overall);
  for (const auto& [id, v] : r.per_task) std::printf("  %s %.4f", id.c_str(), v);
  std::printf("\n");
  std::printf("iterations/epoch %ld, traced rows/task %ld, wall clock %.1fs\n",
              r.iterations_per_epoch, r.trace_rows_per_task, r.wall_clock_sec);
  if (r.warnings.total() > 0) {
    std::printf("warnings: %ld skipped tasks, %ld zero-grad clips, %ld rejected samples\n",
                r.warnings.skipped_tasks, r.warnings.zero_grad_clips, r.warnings.rejected_samples);
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-level backbone-oriented gradient clip training lab"};
  app.require_subcommand(1);

  Overrides ov;
  std::string config_path;
  std::size_t demo_samples = 4;
  int gradcheck_instances = 50;
  long gradcheck_seed = 7;

  CLI::App* train = app.add_subcommand("train", "Run one training experiment");
  train->add_option("config", config_path, "Experiment config file")->required();
  add_override_flags(train, ov);

  CLI::App* cclip = app.add_subcommand("compare-clip", "Ablate vanilla / TBGC* / TBGC on shared data");
  cclip->add_option("config", config_path, "Experiment config file")->required();
  add_override_flags(cclip, ov);

  CLI::App* caug = app.add_subcommand("compare-aug", "Ablate parallel vs multi-branch augmentation");
  caug->add_option("config", config_path, "Experiment config file")->required();
  add_override_flags(caug, ov);

  CLI::App* demo = app.add_subcommand("aug-demo", "Dump before/after augmentation samples as PGM");
  demo->add_option("config", config_path, "Experiment config file")->required();
  demo->add_option("--samples", demo_samples, "Samples per task");
  add_override_flags(demo, ov);

  CLI::App* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gc->add_option("--instances", gradcheck_instances, "Random instances per loss");
  gc->add_option("--seed", gradcheck_seed, "Suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e); // --help
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (train->parsed()) {
      tbgc::ExperimentConfig cfg = load_config(config_path, ov);
      tbgc::RunReport report = tbgc::run_experiment(cfg);
      print_report(report);
      std::printf("outputs in %s\n", cfg.out_dir.c_str());
      return 0;
    }
    if (cclip->parsed()) {
      tbgc::ExperimentConfig cfg = load_config(config_path, ov);
      tbgc::ClipAblation ab = tbgc::compare_clip_modes(cfg);
      std::printf("%-8s %8s %8s %8s %8s   %s\n", "method", "overall", "det", "seg", "cls",
                  "backbone share det/seg/cls");
      for (const auto& row : ab.rows) {
        std::printf("%-8s %8.4f %8.4f %8.4f %8.4f   %.3f / %.3f / %.3f\n", row.method.c_str(),
                    row.overall, row.per_task.at("det"), row.per_task.at("seg"), row.per_task.at("cls"),
                    row.backbone_share.count("det") ? row.backbone_share.at("det") : 0.0,
                    row.backbone_share.count("seg") ? row.backbone_share.at("seg") : 0.0,
                    row.backbone_share.count("cls") ? row.backbone_share.at("cls") : 0.0);
      }
      std::printf("table written to %s\n", ab.csv_path.c_str());
      return 0;
    }
    if (caug->parsed()) {
      tbgc::ExperimentConfig cfg = load_config(config_path, ov);
      tbgc::AugAblation ab = tbgc::compare_aug_modes(cfg);
      std::printf("%-12s %8s %8s %8s %8s\n", "method", "overall", "det", "seg", "cls");
      for (const auto& row : ab.rows) {
        std::printf("%-12s %8.4f %8.4f %8.4f %8.4f\n", row.method.c_str(), row.overall,
                    row.per_task.at("det"), row.per_task.at("seg"), row.per_task.at("cls"));
      }
      std::printf("table written to %s\n", ab.csv_path.c_str());
      return 0;
    }
    if (demo->parsed()) {
      tbgc::ExperimentConfig cfg = load_config(config_path, ov);
      const std::string out = ov.out_dir.empty() ? cfg.out_dir + "/aug_demo" : ov.out_dir;
      long written = tbgc::dump_aug_demo(cfg, demo_samples, out);
      std::printf("wrote %ld before/after pairs and aug_log.txt to %s\n", written, out.c_str());
      return 0;
    }
    if (gc->parsed()) {
      auto reports = tbgc::run_gradcheck(gradcheck_instances, static_cast<std::uint64_t>(gradcheck_seed));
      bool ok = true;
      for (const auto& r : reports) {
        std::printf("%-28s %3d instances  max rel err %.3e  %s\n", r.name.c_str(), r.instances,
                    r.max_rel_err, r.pass ? "ok" : "FAIL");
        ok &= r.pass;
      }
      return ok ? 0 : 2;
    }
  } catch (const tbgc::InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
