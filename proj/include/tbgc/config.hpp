#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tbgc/dataset.hpp"
#include "tbgc/error.hpp"
#include "tbgc/trainer.hpp"

namespace tbgc {

// Minimal TOML-style document: [section] headers, key = value lines, values
// are strings, booleans, numbers, or flat arrays of numbers/strings. Keys are
// stored as dotted paths in insertion order.
class ConfigDoc {
public:
  struct Value {
    enum class Kind { Number, String, Boolean, NumberList, StringList };
    Kind kind = Kind::Number;
    double num = 0.0;
    std::string str;
    bool boolean = false;
    std::vector<double> nums;
    std::vector<std::string> strs;
  };

  static ConfigDoc parse(const std::string& text) {
    ConfigDoc doc;
    std::istringstream in(text);
    std::string line;
    std::string section;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string t = strip(strip_comment(line));
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw InvalidConfig("line " + std::to_string(line_no) + ": unterminated section");
        section = strip(t.substr(1, t.size() - 2));
        if (section.empty()) throw InvalidConfig("line " + std::to_string(line_no) + ": empty section name");
        continue;
      }
      const std::size_t eq = t.find('=');
      if (eq == std::string::npos) {
        throw InvalidConfig("line " + std::to_string(line_no) + ": expected key = value, got '" + t + "'");
      }
      const std::string key = strip(t.substr(0, eq));
      const std::string raw = strip(t.substr(eq + 1));
      if (key.empty()) throw InvalidConfig("line " + std::to_string(line_no) + ": empty key");
      const std::string path = section.empty() ? key : section + "." + key;
      doc.set(path, parse_value(raw, line_no));
    }
    return doc;
  }

  static ConfigDoc parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidConfig("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, Value v) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = std::move(v);
  }

  void set_num(const std::string& key, double v) {
    Value val;
    val.kind = Value::Kind::Number;
    val.num = v;
    set(key, std::move(val));
  }
  void set_str(const std::string& key, std::string v) {
    Value val;
    val.kind = Value::Kind::String;
    val.str = std::move(v);
    set(key, std::move(val));
  }
  void set_bool(const std::string& key, bool v) {
    Value val;
    val.kind = Value::Kind::Boolean;
    val.boolean = v;
    set(key, std::move(val));
  }
  void set_nums(const std::string& key, std::vector<double> v) {
    Value val;
    val.kind = Value::Kind::NumberList;
    val.nums = std::move(v);
    set(key, std::move(val));
  }
  void set_strs(const std::string& key, std::vector<std::string> v) {
    Value val;
    val.kind = Value::Kind::StringList;
    val.strs = std::move(v);
    set(key, std::move(val));
  }

  double num(const std::string& key, double fallback) const {
    auto* v = find(key);
    if (!v) return fallback;
    if (v->kind != Value::Kind::Number) throw InvalidConfig("'" + key + "' must be a number");
    return v->num;
  }
  long integer(const std::string& key, long fallback) const {
    return static_cast<long>(num(key, static_cast<double>(fallback)));
  }
  std::string str(const std::string& key, const std::string& fallback) const {
    auto* v = find(key);
    if (!v) return fallback;
    if (v->kind != Value::Kind::String) throw InvalidConfig("'" + key + "' must be a string");
    return v->str;
  }
  bool boolean(const std::string& key, bool fallback) const {
    auto* v = find(key);
    if (!v) return fallback;
    if (v->kind != Value::Kind::Boolean) throw InvalidConfig("'" + key + "' must be a boolean");
    return v->boolean;
  }
  std::vector<double> nums(const std::string& key, std::vector<double> fallback) const {
    auto* v = find(key);
    if (!v) return fallback;
    if (v->kind == Value::Kind::NumberList) return v->nums;
    if (v->kind == Value::Kind::Number) return {v->num};
    throw InvalidConfig("'" + key + "' must be a number array");
  }
  std::vector<std::string> strs(const std::string& key, std::vector<std::string> fallback) const {
    auto* v = find(key);
    if (!v) return fallback;
    if (v->kind == Value::Kind::StringList) return v->strs;
    if (v->kind == Value::Kind::String) return {v->str};
    throw InvalidConfig("'" + key + "' must be a string array");
  }

  const std::vector<std::string>& keys() const { return order_; }

  // Renders sections grouped in first-appearance order.
  std::string serialize() const {
    std::ostringstream os;
    std::vector<std::string> sections;
    auto section_of = [](const std::string& key) {
      const std::size_t dot = key.rfind('.');
      return dot == std::string::npos ? std::string() : key.substr(0, dot);
    };
    for (const std::string& key : order_) {
      const std::string sec = section_of(key);
      if (std::find(sections.begin(), sections.end(), sec) == sections.end()) sections.push_back(sec);
    }
    bool first = true;
    for (const std::string& sec : sections) {
      if (!sec.empty()) {
        os << (first ? "" : "\n") << "[" << sec << "]\n";
      }
      first = false;
      for (const std::string& key : order_) {
        if (section_of(key) != sec) continue;
        const std::string leaf = sec.empty() ? key : key.substr(sec.size() + 1);
        os << leaf << " = " << render(values_.at(key)) << "\n";
      }
    }
    return os.str();
  }

private:
  static std::string strip(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

  // Drops a trailing # comment, respecting quoted strings.
  static std::string strip_comment(const std::string& s) {
    bool in_string = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') in_string = !in_string;
      if (s[i] == '#' && !in_string) return s.substr(0, i);
    }
    return s;
  }

  static Value parse_scalar(const std::string& raw, long line_no) {
    Value v;
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
      v.kind = Value::Kind::String;
      v.str = raw.substr(1, raw.size() - 2);
      return v;
    }
    if (raw == "true" || raw == "false") {
      v.kind = Value::Kind::Boolean;
      v.boolean = raw == "true";
      return v;
    }
    try {
      std::size_t used = 0;
      v.num = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      v.kind = Value::Kind::Number;
      return v;
    } catch (const std::exception&) {
      throw InvalidConfig("line " + std::to_string(line_no) + ": cannot parse value '" + raw + "'");
    }
  }

  static Value parse_value(const std::string& raw, long line_no) {
    if (raw.empty()) throw InvalidConfig("line " + std::to_string(line_no) + ": empty value");
    if (raw.front() != '[') return parse_scalar(raw, line_no);
    if (raw.back() != ']') throw InvalidConfig("line " + std::to_string(line_no) + ": unterminated array");

    Value v;
    std::string body = strip(raw.substr(1, raw.size() - 2));
    std::vector<Value> items;
    std::size_t pos = 0;
    while (pos < body.size()) {
      std::size_t comma = body.find(',', pos);
      if (comma == std::string::npos) comma = body.size();
      const std::string piece = strip(body.substr(pos, comma - pos));
      if (!piece.empty()) items.push_back(parse_scalar(piece, line_no));
      pos = comma + 1;
    }
    const bool strings = !items.empty() && items.front().kind == Value::Kind::String;
    v.kind = strings ? Value::Kind::StringList : Value::Kind::NumberList;
    for (const Value& item : items) {
      if (strings) {
        if (item.kind != Value::Kind::String) {
          throw InvalidConfig("line " + std::to_string(line_no) + ": mixed array element types");
        }
        v.strs.push_back(item.str);
      } else {
        if (item.kind != Value::Kind::Number) {
          throw InvalidConfig("line " + std::to_string(line_no) + ": mixed array element types");
        }
        v.nums.push_back(item.num);
      }
    }
    return v;
  }

  static std::string render_num(double d) {
    char buf[40];
    if (d == static_cast<double>(static_cast<long long>(d)) && std::fabs(d) < 1e15) {
      std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(d));
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", d);
    }
    return buf;
  }

  static std::string render(const Value& v) {
    switch (v.kind) {
      case Value::Kind::Number:
        return render_num(v.num);
      case Value::Kind::String:
        return "\"" + v.str + "\"";
      case Value::Kind::Boolean:
        return v.boolean ? "true" : "false";
      case Value::Kind::NumberList: {
        std::string out = "[";
        for (std::size_t i = 0; i < v.nums.size(); ++i) out += (i ? ", " : "") + render_num(v.nums[i]);
        return out + "]";
      }
      case Value::Kind::StringList: {
        std::string out = "[";
        for (std::size_t i = 0; i < v.strs.size(); ++i) out += (i ? ", " : "") + ("\"" + v.strs[i] + "\"");
        return out + "]";
      }
    }
    return "";
  }

  const Value* find(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
  }

  std::map<std::string, Value> values_;
  std::vector<std::string> order_;
};

// Per-task augmentation declaration.
struct AugmentDecl {
  enum class Mode { None, MultiBranch, Parallel };
  Mode mode = Mode::None;
  std::vector<std::vector<std::string>> branches; // op names per branch
  std::vector<double> start_probs;
  std::vector<double> end_probs;
  std::vector<std::string> parallel_ops;
  AugParams params;

  static const char* mode_name(Mode m) {
    switch (m) {
      case Mode::None: return "none";
      case Mode::MultiBranch: return "multibranch";
      case Mode::Parallel: return "parallel";
    }
    return "?";
  }
  static Mode parse_mode(const std::string& s) {
    if (s == "none") return Mode::None;
    if (s == "multibranch") return Mode::MultiBranch;
    if (s == "parallel") return Mode::Parallel;
    throw InvalidConfig("unknown augment mode '" + s + "'");
  }

  MultiBranchPipeline build_pipeline(long total_epochs) const {
    MultiBranchPipeline p;
    for (const auto& ops : branches) {
      std::vector<AugOp> parsed;
      for (const std::string& name : ops) parsed.push_back(AugOp{parse_aug_kind(name)});
      p.branches.emplace_back(std::move(parsed));
    }
    p.start_probs = start_probs;
    p.end_probs = end_probs;
    p.total_epochs = std::max<long>(1, total_epochs);
    p.params = params;
    p.validate();
    return p;
  }

  AugBranch build_parallel_branch() const {
    std::vector<AugOp> parsed;
    for (const std::string& name : parallel_ops) parsed.push_back(AugOp{parse_aug_kind(name)});
    // the parallel strategy stacks every op, deliberately ignoring the
    // one-strong-op rule, so it bypasses AugBranch's constructor check
    return AugBranch::unchecked(std::move(parsed));
  }

  friend bool operator==(const AugmentDecl& a, const AugmentDecl& b) {
    return a.mode == b.mode && a.branches == b.branches && a.start_probs == b.start_probs &&
           a.end_probs == b.end_probs && a.parallel_ops == b.parallel_ops &&
           a.params.noise_sigma == b.params.noise_sigma && a.params.crop_ratio == b.params.crop_ratio &&
           a.params.scale_min == b.params.scale_min && a.params.scale_max == b.params.scale_max &&
           a.params.contrast_min == b.params.contrast_min && a.params.contrast_max == b.params.contrast_max;
  }
};

struct TaskConfig {
  TaskSpec spec;
  AugmentDecl augment;

  friend bool operator==(const TaskConfig& a, const TaskConfig& b) {
    return a.spec.id == b.spec.id && a.spec.dataset_size == b.spec.dataset_size &&
           a.spec.batch_size == b.spec.batch_size && a.spec.loss_scale == b.spec.loss_scale &&
           a.spec.classes == b.spec.classes && a.augment == b.augment;
  }
};

// Everything one run needs; a config file fully determines an experiment.
struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "runs/out";
  double train_fraction = 0.8;
  long checkpoint_every = 0; // epochs between checkpoints, 0 = final only
  TrainConfig train;
  ModelConfig model;
  TaskConfig cls;
  TaskConfig seg;
  TaskConfig det;

  static ExperimentConfig defaults();
  static ExperimentConfig from_doc(const ConfigDoc& doc);
  static ExperimentConfig parse(const std::string& text) { return from_doc(ConfigDoc::parse(text)); }
  static ExperimentConfig load(const std::string& path) { return from_doc(ConfigDoc::parse_file(path)); }
  ConfigDoc to_doc() const;
  std::string serialize() const { return to_doc().serialize(); }

  std::vector<const TaskConfig*> tasks() const { return {&cls, &seg, &det}; }

  void validate() const {
    train.validate();
    cls.spec.validate();
    seg.spec.validate();
    det.spec.validate();
    if (train_fraction <= 0.0 || train_fraction >= 1.0) {
      throw InvalidConfig("train_fraction must lie in (0, 1)");
    }
    if (checkpoint_every < 0) throw InvalidConfig("checkpoint_every must be nonnegative");
    for (const TaskConfig* t : tasks()) {
      if (t->augment.mode == AugmentDecl::Mode::MultiBranch) {
        t->augment.build_pipeline(train.epochs); // validates branches and probs
      }
    }
  }
};

namespace detail {

inline void augment_from_doc(const ConfigDoc& doc, const std::string& prefix, AugmentDecl& decl) {
  decl.mode = AugmentDecl::parse_mode(doc.str(prefix + ".mode", AugmentDecl::mode_name(decl.mode)));
  std::vector<std::vector<std::string>> branches;
  for (int i = 1;; ++i) {
    const std::string key = prefix + ".branch" + std::to_string(i);
    if (!doc.has(key)) break;
    branches.push_back(doc.strs(key, {}));
  }
  if (!branches.empty()) decl.branches = std::move(branches);
  decl.start_probs = doc.nums(prefix + ".start_probs", decl.start_probs);
  decl.end_probs = doc.nums(prefix + ".end_probs", decl.end_probs);
  decl.parallel_ops = doc.strs(prefix + ".parallel", decl.parallel_ops);
  decl.params.noise_sigma = doc.num(prefix + ".noise_sigma", decl.params.noise_sigma);
  decl.params.crop_ratio = doc.num(prefix + ".crop_ratio", decl.params.crop_ratio);
  decl.params.scale_min = doc.num(prefix + ".scale_min", decl.params.scale_min);
  decl.params.scale_max = doc.num(prefix + ".scale_max", decl.params.scale_max);
  decl.params.contrast_min = doc.num(prefix + ".contrast_min", decl.params.contrast_min);
  decl.params.contrast_max = doc.num(prefix + ".contrast_max", decl.params.contrast_max);
}

inline void augment_to_doc(ConfigDoc& doc, const std::string& prefix, const AugmentDecl& decl) {
  doc.set_str(prefix + ".mode", AugmentDecl::mode_name(decl.mode));
  for (std::size_t i = 0; i < decl.branches.size(); ++i) {
    doc.set_strs(prefix + ".branch" + std::to_string(i + 1), decl.branches[i]);
  }
  if (!decl.start_probs.empty()) doc.set_nums(prefix + ".start_probs", decl.start_probs);
  if (!decl.end_probs.empty()) doc.set_nums(prefix + ".end_probs", decl.end_probs);
  if (!decl.parallel_ops.empty()) doc.set_strs(prefix + ".parallel", decl.parallel_ops);
  doc.set_num(prefix + ".noise_sigma", decl.params.noise_sigma);
  doc.set_num(prefix + ".crop_ratio", decl.params.crop_ratio);
  doc.set_num(prefix + ".scale_min", decl.params.scale_min);
  doc.set_num(prefix + ".scale_max", decl.params.scale_max);
  doc.set_num(prefix + ".contrast_min", decl.params.contrast_min);
  doc.set_num(prefix + ".contrast_max", decl.params.contrast_max);
}

inline void task_from_doc(const ConfigDoc& doc, TaskConfig& task) {
  const std::string prefix = "task." + task.spec.id;
  task.spec.dataset_size = static_cast<std::size_t>(doc.integer(prefix + ".dataset_size",
                                                                static_cast<long>(task.spec.dataset_size)));
  task.spec.batch_size = static_cast<std::size_t>(doc.integer(prefix + ".batch_size",
                                                              static_cast<long>(task.spec.batch_size)));
  task.spec.loss_scale = doc.num(prefix + ".loss_scale", task.spec.loss_scale);
  task.spec.classes = static_cast<std::size_t>(doc.integer(prefix + ".classes",
                                                           static_cast<long>(task.spec.classes)));
  augment_from_doc(doc, "augment." + task.spec.id, task.augment);
}

inline void task_to_doc(ConfigDoc& doc, const TaskConfig& task) {
  const std::string prefix = "task." + task.spec.id;
  doc.set_num(prefix + ".dataset_size", static_cast<double>(task.spec.dataset_size));
  doc.set_num(prefix + ".batch_size", static_cast<double>(task.spec.batch_size));
  doc.set_num(prefix + ".loss_scale", task.spec.loss_scale);
  if (task.spec.id == kTaskCls) doc.set_num(prefix + ".classes", static_cast<double>(task.spec.classes));
}

} // namespace detail

inline ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.train.epochs = 100;
  cfg.train.base_lr = 1e-4;
  cfg.train.weight_decay = 1e-4;
  cfg.train.warmup_epochs = 5;
  cfg.train.warmup_ratio = 0.001;
  cfg.train.backbone_lr_factor = 0.1;
  cfg.train.log_points_per_epoch = 9;
  cfg.train.clip.mode = ClipMode::TBGC;
  cfg.train.clip.max_norm = 0.1;
  cfg.train.clip.vanilla = VanillaSemantics::Literal;

  cfg.cls.spec = TaskSpec{kTaskCls, 320, 8, 1.0, 8};
  cfg.seg.spec = TaskSpec{kTaskSeg, 80, 2, 10.0, 8};
  cfg.det.spec = TaskSpec{kTaskDet, 80, 2, 100.0, 8};

  // classification keeps a plain single-branch pipeline
  cfg.cls.augment.mode = AugmentDecl::Mode::MultiBranch;
  cfg.cls.augment.branches = {{"hflip", "noise"}};
  cfg.cls.augment.start_probs = {1.0};
  cfg.cls.augment.end_probs = {1.0};
  cfg.cls.augment.parallel_ops = {"hflip", "noise"};

  // detection: the strong ops each get their own branch
  cfg.det.augment.mode = AugmentDecl::Mode::MultiBranch;
  cfg.det.augment.branches = {{"multiscale", "hflip", "policy_standin", "noise"},
                              {"mosaic", "hflip", "noise"},
                              {"mixup", "hflip", "noise"}};
  cfg.det.augment.start_probs = {0.2, 0.4, 0.4};
  cfg.det.augment.end_probs = {0.6, 0.2, 0.2};
  cfg.det.augment.parallel_ops = {"multiscale", "mosaic", "mixup", "hflip", "policy_standin", "noise"};

  cfg.seg.augment.mode = AugmentDecl::Mode::MultiBranch;
  cfg.seg.augment.branches = {{"multiscale", "random_crop", "rotate", "noise"},
                              {"mosaic", "random_crop", "hflip", "noise"}};
  cfg.seg.augment.start_probs = {0.4, 0.6};
  cfg.seg.augment.end_probs = {0.7, 0.3};
  cfg.seg.augment.parallel_ops = {"multiscale", "mosaic", "random_crop", "rotate", "hflip", "noise"};

  return cfg;
}

namespace detail {

// Flags keys the schema does not know, so typos fail loudly instead of
// silently falling back to defaults.
inline void reject_unknown_keys(const ConfigDoc& doc, const ExperimentConfig& parsed) {
  ConfigDoc known = parsed.to_doc();
  std::vector<std::string> extra{"task.seg.classes", "task.det.classes"};
  for (const std::string& key : doc.keys()) {
    if (known.has(key)) continue;
    if (std::find(extra.begin(), extra.end(), key) != extra.end()) continue;
    throw InvalidConfig("unrecognized key '" + key + "'");
  }
}

} // namespace detail

inline ExperimentConfig ExperimentConfig::from_doc(const ConfigDoc& doc) {
  ExperimentConfig cfg = defaults();
  cfg.seed = static_cast<std::uint64_t>(doc.integer("seed", static_cast<long>(cfg.seed)));
  cfg.out_dir = doc.str("out_dir", cfg.out_dir);
  cfg.train_fraction = doc.num("train_fraction", cfg.train_fraction);
  cfg.checkpoint_every = doc.integer("checkpoint_every", cfg.checkpoint_every);

  cfg.train.epochs = doc.integer("train.epochs", cfg.train.epochs);
  cfg.train.base_lr = doc.num("train.base_lr", cfg.train.base_lr);
  cfg.train.weight_decay = doc.num("train.weight_decay", cfg.train.weight_decay);
  cfg.train.warmup_epochs = doc.integer("train.warmup_epochs", cfg.train.warmup_epochs);
  cfg.train.warmup_ratio = doc.num("train.warmup_ratio", cfg.train.warmup_ratio);
  cfg.train.backbone_lr_factor = doc.num("train.backbone_lr_factor", cfg.train.backbone_lr_factor);
  cfg.train.log_points_per_epoch = doc.integer("train.log_points_per_epoch", cfg.train.log_points_per_epoch);
  cfg.train.seed = cfg.seed;

  cfg.train.clip.mode = parse_clip_mode(doc.str("clip.mode", clip_mode_name(cfg.train.clip.mode)));
  cfg.train.clip.max_norm = doc.num("clip.max_norm", cfg.train.clip.max_norm);
  const std::string sem = doc.str("clip.vanilla_semantics",
                                  cfg.train.clip.vanilla == VanillaSemantics::Literal ? "literal" : "clamped");
  if (sem == "literal") {
    cfg.train.clip.vanilla = VanillaSemantics::Literal;
  } else if (sem == "clamped") {
    cfg.train.clip.vanilla = VanillaSemantics::Clamped;
  } else {
    throw InvalidConfig("clip.vanilla_semantics must be literal or clamped, got '" + sem + "'");
  }

  const long img = doc.integer("model.image_size", static_cast<long>(cfg.model.backbone.height));
  cfg.model.backbone.height = cfg.model.backbone.width = static_cast<std::size_t>(img);
  cfg.model.backbone.channels = static_cast<std::size_t>(doc.integer("model.channels", 1));
  std::vector<double> hidden = doc.nums("model.hidden", {});
  if (!hidden.empty()) {
    cfg.model.backbone.hidden.clear();
    for (double h : hidden) cfg.model.backbone.hidden.push_back(static_cast<std::size_t>(h));
  }
  cfg.model.backbone.feature_dim = static_cast<std::size_t>(
      doc.integer("model.feature_dim", static_cast<long>(cfg.model.backbone.feature_dim)));
  cfg.model.cls.hidden = static_cast<std::size_t>(
      doc.integer("model.cls_hidden", static_cast<long>(cfg.model.cls.hidden)));
  cfg.model.arcface.margin = doc.num("model.arcface_margin", cfg.model.arcface.margin);
  cfg.model.arcface.scale = doc.num("model.arcface_scale", cfg.model.arcface.scale);
  cfg.model.seg.classes = static_cast<std::size_t>(
      doc.integer("model.seg_classes", static_cast<long>(cfg.model.seg.classes)));

  detail::task_from_doc(doc, cfg.cls);
  detail::task_from_doc(doc, cfg.seg);
  detail::task_from_doc(doc, cfg.det);
  cfg.model.arcface.classes = cfg.cls.spec.classes;

  detail::reject_unknown_keys(doc, cfg);
  cfg.validate();
  return cfg;
}

inline ConfigDoc ExperimentConfig::to_doc() const {
  ConfigDoc doc;
  doc.set_num("seed", static_cast<double>(seed));
  doc.set_str("out_dir", out_dir);
  doc.set_num("train_fraction", train_fraction);
  doc.set_num("checkpoint_every", static_cast<double>(checkpoint_every));

  doc.set_num("train.epochs", static_cast<double>(train.epochs));
  doc.set_num("train.base_lr", train.base_lr);
  doc.set_num("train.weight_decay", train.weight_decay);
  doc.set_num("train.warmup_epochs", static_cast<double>(train.warmup_epochs));
  doc.set_num("train.warmup_ratio", train.warmup_ratio);
  doc.set_num("train.backbone_lr_factor", train.backbone_lr_factor);
  doc.set_num("train.log_points_per_epoch", static_cast<double>(train.log_points_per_epoch));

  doc.set_str("clip.mode", clip_mode_name(train.clip.mode));
  doc.set_num("clip.max_norm", train.clip.max_norm);
  doc.set_str("clip.vanilla_semantics", train.clip.vanilla == VanillaSemantics::Literal ? "literal" : "clamped");

  doc.set_num("model.image_size", static_cast<double>(model.backbone.height));
  doc.set_num("model.channels", static_cast<double>(model.backbone.channels));
  std::vector<double> hidden;
  for (std::size_t h : model.backbone.hidden) hidden.push_back(static_cast<double>(h));
  doc.set_nums("model.hidden", hidden);
  doc.set_num("model.feature_dim", static_cast<double>(model.backbone.feature_dim));
  doc.set_num("model.cls_hidden", static_cast<double>(model.cls.hidden));
  doc.set_num("model.arcface_margin", model.arcface.margin);
  doc.set_num("model.arcface_scale", model.arcface.scale);
  doc.set_num("model.seg_classes", static_cast<double>(model.seg.classes));

  for (const TaskConfig* t : tasks()) detail::task_to_doc(doc, *t);
  for (const TaskConfig* t : tasks()) detail::augment_to_doc(doc, "augment." + t->spec.id, t->augment);
  return doc;
}

} // namespace tbgc
