#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>

#include "tbgc/config.hpp"
#include "tbgc/dataset.hpp"
#include "tbgc/experiment.hpp"
#include "tbgc/gradcheck.hpp"
#include "test_util.hpp"

using namespace tbgc;
using namespace tbgc::test;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("tbgc_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig micro_config(const std::string& tag) {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  cfg.seed = 11;
  cfg.out_dir = fresh_dir(tag).string();
  cfg.train.epochs = 2;
  cfg.train.warmup_epochs = 1;
  cfg.train.log_points_per_epoch = 3;
  cfg.model.backbone.height = 8;
  cfg.model.backbone.width = 8;
  cfg.model.backbone.hidden = {16};
  cfg.model.backbone.feature_dim = 8;
  cfg.model.cls.hidden = 8;
  cfg.cls.spec.dataset_size = 24;
  cfg.cls.spec.batch_size = 4;
  cfg.seg.spec.dataset_size = 12;
  cfg.seg.spec.batch_size = 2;
  cfg.det.spec.dataset_size = 12;
  cfg.det.spec.batch_size = 2;
  return cfg;
}

} // namespace

TEST_CASE("dataset generation") {
  BackboneConfig geom;
  geom.height = 16;
  geom.width = 16;

  SECTION("same seed gives byte-identical datasets") {
    TaskSpec spec{kTaskDet, 20, 2, 1.0, 8};
    Dataset a = generate_dataset(spec, geom, 5);
    Dataset b = generate_dataset(spec, geom, 5);
    REQUIRE(content_digest(a) == content_digest(b));
    Dataset c = generate_dataset(spec, geom, 6);
    REQUIRE(content_digest(a) != content_digest(c));
  }

  SECTION("every det box is valid") {
    TaskSpec spec{kTaskDet, 64, 2, 1.0, 8};
    Dataset ds = generate_dataset(spec, geom, 7);
    for (const Sample& s : ds.samples) {
      REQUIRE(s.box.has_value());
      REQUIRE(s.box->valid());
    }
  }

  SECTION("seg mask count equals the rasterized rectangle area") {
    TaskSpec spec{kTaskSeg, 48, 2, 1.0, 8};
    Dataset ds = generate_dataset(spec, geom, 9);
    for (const Sample& s : ds.samples) {
      REQUIRE(s.mask.has_value());
      // bounding box of non-background pixels
      std::size_t imin = geom.height, imax = 0, jmin = geom.width, jmax = 0, count = 0;
      for (std::size_t i = 0; i < geom.height; ++i)
        for (std::size_t j = 0; j < geom.width; ++j) {
          if ((*s.mask)[i * geom.width + j] != 0) {
            ++count;
            imin = std::min(imin, i);
            imax = std::max(imax, i);
            jmin = std::min(jmin, j);
            jmax = std::max(jmax, j);
          }
        }
      REQUIRE(count == (imax - imin + 1) * (jmax - jmin + 1)); // solid rectangle
      REQUIRE(count >= 9);
      bool has_border = false, has_interior = false;
      for (std::size_t v : *s.mask) {
        has_border |= v == 1;
        has_interior |= v == 2;
      }
      REQUIRE(has_border);
      REQUIRE(has_interior);
    }
  }

  SECTION("cls labels cover the class set") {
    TaskSpec spec{kTaskCls, 32, 4, 1.0, 8};
    Dataset ds = generate_dataset(spec, geom, 3);
    std::vector<int> seen(8, 0);
    for (const Sample& s : ds.samples) {
      REQUIRE(s.class_label.has_value());
      seen[*s.class_label] += 1;
    }
    for (int c : seen) REQUIRE(c == 4);
  }
}

TEST_CASE("train/eval split") {
  SplitIndices s = train_eval_split(100, 0.8, 42);
  REQUIRE(s.train.size() == 80);
  REQUIRE(s.eval.size() == 20);
  std::vector<bool> seen(100, false);
  for (std::size_t i : s.train) seen[i] = true;
  for (std::size_t i : s.eval) {
    REQUIRE_FALSE(seen[i]); // disjoint
    seen[i] = true;
  }
  for (bool b : seen) REQUIRE(b);

  SplitIndices again = train_eval_split(100, 0.8, 42);
  REQUIRE(again.train == s.train);
  REQUIRE_THROWS_AS(train_eval_split(10, 1.5, 1), InvalidConfig);
}

TEST_CASE("batch assembly") {
  BackboneConfig geom;
  geom.height = 8;
  geom.width = 8;
  Rng rng(3);

  SECTION("classification batch with a soft label falls back to argmax") {
    Sample hard;
    hard.image = random_tensor({8, 8, 1}, rng);
    hard.class_label = 3;
    Sample soft;
    soft.image = random_tensor({8, 8, 1}, rng);
    soft.soft_label = std::vector<double>{0.1, 0.2, 0.6, 0.1};
    Batch b = make_batch({hard, soft}, kTaskCls, geom);
    REQUIRE(b.classes == std::vector<std::size_t>{3, 2});
    REQUIRE(b.images.shape() == std::vector<std::size_t>{2, 8, 8, 1});
  }

  SECTION("oversized samples are resized to the model geometry") {
    Sample s;
    s.image = random_tensor({16, 16, 1}, rng);
    s.box = BoxLabel{0.5, 0.5, 0.25, 0.25};
    Batch b = make_batch({s}, kTaskDet, geom);
    REQUIRE(b.images.shape() == std::vector<std::size_t>{1, 8, 8, 1});
    REQUIRE(b.boxes.at(0, 2) == Approx(0.25));
  }
}

TEST_CASE("box iou") {
  BoxLabel a{0.5, 0.5, 0.2, 0.2};
  REQUIRE(box_iou(a, a) == Approx(1.0).epsilon(1e-12));
  BoxLabel far{0.1, 0.1, 0.05, 0.05};
  REQUIRE(box_iou(a, far) == 0.0);
  BoxLabel half{0.5, 0.45, 0.2, 0.2}; // shifted by half the height
  REQUIRE(box_iou(a, half) == Approx(0.15 / 0.25).epsilon(1e-9));
}

TEST_CASE("config document parsing") {
  const std::string text =
      "# a comment\n"
      "seed = 7\n"
      "name = \"demo\"\n"
      "flag = true\n"
      "\n"
      "[train]\n"
      "epochs = 10\n"
      "base_lr = 1e-3\n"
      "hidden = [32, 16]\n"
      "ops = [\"hflip\", \"noise\"]\n";

  ConfigDoc doc = ConfigDoc::parse(text);
  REQUIRE(doc.integer("seed", 0) == 7);
  REQUIRE(ConfigDoc::parse("x = 2.5 # trailing comment\ns = \"a # not a comment\"\n").num("x", 0) == 2.5);
  REQUIRE(ConfigDoc::parse("s = \"a # b\"\n").str("s", "") == "a # b");
  REQUIRE(doc.str("name", "") == "demo");
  REQUIRE(doc.boolean("flag", false));
  REQUIRE(doc.integer("train.epochs", 0) == 10);
  REQUIRE(doc.num("train.base_lr", 0) == Approx(1e-3));
  REQUIRE(doc.nums("train.hidden", {}) == std::vector<double>{32, 16});
  REQUIRE(doc.strs("train.ops", {}) == std::vector<std::string>{"hflip", "noise"});
  REQUIRE(doc.num("missing", 2.5) == 2.5);

  SECTION("serialized text parses back to the same values") {
    ConfigDoc again = ConfigDoc::parse(doc.serialize());
    REQUIRE(again.integer("train.epochs", 0) == 10);
    REQUIRE(again.strs("train.ops", {}) == std::vector<std::string>{"hflip", "noise"});
  }
  SECTION("diagnostics carry line numbers and keys") {
    REQUIRE_THROWS_WITH(ConfigDoc::parse("x ="), Catch::Contains("line 1"));
    REQUIRE_THROWS_WITH(ConfigDoc::parse("[oops\n"), Catch::Contains("unterminated"));
    REQUIRE_THROWS_WITH(doc.num("name", 0), Catch::Contains("name"));
  }
}

TEST_CASE("experiment config round trip") {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  cfg.seed = 99;
  cfg.train.epochs = 17;
  cfg.det.spec.loss_scale = 55.0;
  cfg.seg.augment.params.noise_sigma = 0.125;

  ExperimentConfig back = ExperimentConfig::parse(cfg.serialize());
  REQUIRE(back.seed == cfg.seed);
  REQUIRE(back.train.epochs == cfg.train.epochs);
  REQUIRE(back.train.base_lr == cfg.train.base_lr);
  REQUIRE(back.train.clip.mode == cfg.train.clip.mode);
  REQUIRE(back.train.clip.max_norm == cfg.train.clip.max_norm);
  REQUIRE(back.det.spec.loss_scale == 55.0);
  REQUIRE(back.cls == cfg.cls);
  REQUIRE(back.seg == cfg.seg);
  REQUIRE(back.det == cfg.det);
  REQUIRE(back.model.backbone.hidden == cfg.model.backbone.hidden);
  REQUIRE(back.model.arcface.margin == cfg.model.arcface.margin);

  SECTION("defaults carry the reference hyperparameters") {
    ExperimentConfig d = ExperimentConfig::defaults();
    REQUIRE(d.train.epochs == 100);
    REQUIRE(d.train.base_lr == 1e-4);
    REQUIRE(d.train.weight_decay == 1e-4);
    REQUIRE(d.train.warmup_epochs == 5);
    REQUIRE(d.train.warmup_ratio == 0.001);
    REQUIRE(d.train.backbone_lr_factor == 0.1);
    REQUIRE(d.train.clip.max_norm == 0.1);
    REQUIRE(d.model.arcface.margin == 0.4);
    REQUIRE(d.cls.spec.batch_size == 8);
    REQUIRE(d.seg.spec.batch_size == 2);
    REQUIRE(d.det.spec.batch_size == 2);
    REQUIRE(d.cls.spec.loss_scale == 1.0);
    REQUIRE(d.seg.spec.loss_scale == 10.0);
    REQUIRE(d.det.spec.loss_scale == 100.0);
  }

  SECTION("field-level diagnostics") {
    REQUIRE_THROWS_WITH(ExperimentConfig::parse("[train]\nepochs = -3\n"), Catch::Contains("epochs"));
    REQUIRE_THROWS_WITH(ExperimentConfig::parse("[clip]\nmode = \"bogus\"\n"), Catch::Contains("bogus"));
    REQUIRE_THROWS_WITH(ExperimentConfig::parse("[task.det]\nbatch_size = 0\n"),
                        Catch::Contains("batch_size"));
    REQUIRE_THROWS_WITH(ExperimentConfig::parse("[train]\nepochz = 5\n"),
                        Catch::Contains("unrecognized key 'train.epochz'"));
  }
}

TEST_CASE("run_experiment produces a complete run directory") {
  ExperimentConfig cfg = micro_config("run");
  std::vector<StepTrace> traces;
  RunReport report = run_experiment(cfg, &traces);

  SECTION("report invariants") {
    REQUIRE(report.per_task.size() == 3);
    double mean = (report.per_task.at("cls") + report.per_task.at("seg") + report.per_task.at("det")) / 3.0;
    REQUIRE(report.overall == Approx(mean).epsilon(1e-12));
    REQUIRE(report.history.size() == 2);
    REQUIRE(report.iterations_per_epoch == 5); // ceil(19 train cls / 4)
    for (const auto& [id, v] : report.per_task) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }

  SECTION("trace file matches the captured stream") {
    auto rows = parse_trace_csv_file(cfg.out_dir + "/trace.csv");
    REQUIRE(rows.size() == traces.size());
    REQUIRE(static_cast<long>(rows.size()) == report.trace_rows_per_task * 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      REQUIRE(rows[i].task == traces[i].task);
      REQUIRE(rows[i].backbone_grad_norm == Approx(traces[i].backbone_grad_norm).epsilon(1e-15));
      REQUIRE(rows[i].backbone_grad_norm >= 0.0);
    }
  }

  SECTION("checkpoint and report files load") {
    ParamStore loaded = load_checkpoint(cfg.out_dir + "/checkpoint.ckpt");
    REQUIRE(loaded.size() > 0);
    REQUIRE(loaded.has_backbone());

    std::ifstream jf(cfg.out_dir + "/report.json");
    REQUIRE(jf.good());
    nlohmann::json j;
    jf >> j;
    REQUIRE(j["overall"].get<double>() == Approx(report.overall));
    REQUIRE(j["warnings"].contains("rejected_samples"));

    ExperimentConfig echoed = ExperimentConfig::load(cfg.out_dir + "/config.toml");
    REQUIRE(echoed.seed == cfg.seed);
  }

  SECTION("identical config and seed reproduce the report") {
    ExperimentConfig cfg2 = micro_config("run_again");
    RunReport r2 = run_experiment(cfg2);
    ExperimentConfig cfg3 = micro_config("run_again_b");
    RunReport r3 = run_experiment(cfg3);
    REQUIRE(r2.per_task == r3.per_task);
    REQUIRE(r2.overall == r3.overall);
  }
}

TEST_CASE("checkpoint interval writes epoch snapshots") {
  ExperimentConfig cfg = micro_config("ckpt");
  cfg.checkpoint_every = 1;
  run_experiment(cfg);
  REQUIRE(fs::exists(fs::path(cfg.out_dir) / "checkpoint_epoch_1.ckpt"));
  REQUIRE(fs::exists(fs::path(cfg.out_dir) / "checkpoint_epoch_2.ckpt"));
  REQUIRE(fs::exists(fs::path(cfg.out_dir) / "checkpoint.ckpt"));
}

TEST_CASE("mean backbone shares") {
  std::vector<StepTrace> traces;
  auto push = [&](long it, const char* task, double pre, double post) {
    StepTrace t;
    t.epoch = 0;
    t.iteration = it;
    t.task = task;
    t.backbone_grad_norm = pre;
    t.backbone_norm_postclip = post;
    traces.push_back(t);
  };
  push(0, "det", 8.0, 0.1);
  push(0, "seg", 1.0, 0.1);
  push(0, "cls", 1.0, 0.1);
  push(1, "det", 6.0, 0.1);
  push(1, "seg", 3.0, 0.1);
  push(1, "cls", 1.0, 0.1);

  auto post = mean_backbone_shares(traces, true);
  REQUIRE(post.at("det") == Approx(1.0 / 3.0).epsilon(1e-12));
  REQUIRE(post.at("cls") == Approx(1.0 / 3.0).epsilon(1e-12));

  auto pre = mean_backbone_shares(traces, false);
  REQUIRE(pre.at("det") == Approx((0.8 + 0.6) / 2.0).epsilon(1e-12));
  REQUIRE(pre.at("seg") == Approx((0.1 + 0.3) / 2.0).epsilon(1e-12));
}

TEST_CASE("clip-mode ablation emits the three-row table") {
  ExperimentConfig cfg = micro_config("clipablation");
  std::vector<std::vector<StepTrace>> traces;
  ClipAblation ab = compare_clip_modes(cfg, &traces);

  REQUIRE(ab.rows.size() == 3);
  REQUIRE(ab.rows[0].method == "vanilla");
  REQUIRE(ab.rows[1].method == "TBGC*");
  REQUIRE(ab.rows[2].method == "TBGC");
  for (const ClipAblationRow& r : ab.rows) {
    REQUIRE(r.per_task.size() == 3);
  }

  // TBGC equalizes post-clip backbone contributions
  const auto& tbgc_share = ab.rows[2].backbone_share;
  REQUIRE(tbgc_share.at("det") == Approx(1.0 / 3.0).margin(1e-3));
  REQUIRE(tbgc_share.at("seg") == Approx(1.0 / 3.0).margin(1e-3));
  REQUIRE(tbgc_share.at("cls") == Approx(1.0 / 3.0).margin(1e-3));

  std::ifstream csv(ab.csv_path);
  REQUIRE(csv.good());
  std::string line;
  std::getline(csv, line);
  REQUIRE(line == "method,overall,det,seg,cls,share_det,share_seg,share_cls");
  int rows = 0;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  REQUIRE(rows == 3);
}

TEST_CASE("augmentation ablation emits the two-row table") {
  ExperimentConfig cfg = micro_config("augablation");
  AugAblation ab = compare_aug_modes(cfg);
  REQUIRE(ab.rows.size() == 2);
  REQUIRE(ab.rows[0].method == "parallel");
  REQUIRE(ab.rows[1].method == "MultiBranch");

  std::ifstream csv(ab.csv_path);
  std::string line;
  std::getline(csv, line);
  REQUIRE(line == "method,overall,det,seg,cls");
  int rows = 0;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  REQUIRE(rows == 2);

  SECTION("the parallel strategy applies every configured op in order") {
    AugBranch parallel = cfg.det.augment.build_parallel_branch();
    Dataset data = generate_dataset(cfg.det.spec, cfg.model.backbone, cfg.seed);
    std::vector<Sample> partners(data.samples.begin(), data.samples.begin() + 4);
    Rng rng(5);
    ApplyResult r = apply_branch(parallel, data.samples[5], cfg.det.augment.params, partners, rng);
    REQUIRE(r.ops_applied == cfg.det.augment.parallel_ops);
  }
}

TEST_CASE("aug demo dumps portable graymaps and an op log") {
  ExperimentConfig cfg = micro_config("augdemo");
  fs::path out = fresh_dir("augdemo_out");
  long written = dump_aug_demo(cfg, 2, out.string());
  REQUIRE(written == 6); // 2 samples x 3 tasks with pipelines

  REQUIRE(fs::exists(out / "aug_log.txt"));
  REQUIRE(fs::exists(out / "det_000_before.pgm"));
  REQUIRE(fs::exists(out / "det_000_after.pgm"));

  std::ifstream pgm(out / "det_000_before.pgm");
  std::string magic;
  std::size_t w = 0, h = 0;
  int maxval = 0;
  pgm >> magic >> w >> h >> maxval;
  REQUIRE(magic == "P2");
  REQUIRE(w == cfg.model.backbone.width);
  REQUIRE(h == cfg.model.backbone.height);
  REQUIRE(maxval == 255);
  int count = 0, v;
  while (pgm >> v) {
    REQUIRE(v >= 0);
    REQUIRE(v <= 255);
    ++count;
  }
  REQUIRE(count == static_cast<int>(w * h));

  // every op-log line names ops from exactly one branch
  std::ifstream log(out / "aug_log.txt");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    ++lines;
    REQUIRE(line.find("ops=") != std::string::npos);
  }
  REQUIRE(lines == 6);
}

TEST_CASE("rejected augmented samples are counted, not dropped") {
  // an aggressive crop on near-full-frame detection boxes rejects often;
  // the run must surface the count in its report
  ExperimentConfig cfg = micro_config("rejects");
  cfg.det.augment.mode = AugmentDecl::Mode::MultiBranch;
  cfg.det.augment.branches = {{"random_crop"}};
  cfg.det.augment.start_probs = {1.0};
  cfg.det.augment.end_probs = {1.0};
  cfg.det.augment.params.crop_ratio = 0.4;

  RunReport report = run_experiment(cfg);
  REQUIRE(report.warnings.rejected_samples > 0);

  std::ifstream jf(cfg.out_dir + "/report.json");
  nlohmann::json j;
  jf >> j;
  REQUIRE(j["warnings"]["rejected_samples"].get<long>() == report.warnings.rejected_samples);
}

TEST_CASE("gradcheck suite passes on a small budget") {
  auto reports = run_gradcheck(10, 123);
  REQUIRE(reports.size() == 7);
  for (const GradCheckReport& r : reports) {
    INFO(r.name << " max_rel_err=" << r.max_rel_err);
    REQUIRE(r.pass);
  }
  REQUIRE(gradcheck_all_pass(reports));
}
