// SPDX-License-Identifier: Apache-2.0
#include "kdkit/recipes.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <sstream>

#include "kdkit/errors.hpp"

namespace kd {
namespace {

template <typename E, std::size_t N>
E enum_from(const std::array<std::pair<E, const char*>, N>& table, const std::string& s,
            const char* what) {
  for (const auto& [value, name] : table) {
    if (s == name) return value;
  }
  std::string valid;
  for (const auto& entry : table) valid += std::string(valid.empty() ? "" : ", ") + entry.second;
  fail(ErrorKind::Config, std::string("unknown ") + what + " '" + s + "' (valid: " + valid + ")");
}

template <typename E, std::size_t N>
std::string enum_name(const std::array<std::pair<E, const char*>, N>& table, E v) {
  for (const auto& [value, name] : table) {
    if (value == v) return name;
  }
  return "?";
}

constexpr std::array<std::pair<OptimizerKind, const char*>, 3> kOptimizers{
    {{OptimizerKind::LAMB, "LAMB"}, {OptimizerKind::ADAMW, "ADAMW"}, {OptimizerKind::SGD, "SGD"}}};
constexpr std::array<std::pair<LabelLoss, const char*>, 3> kLabelLosses{
    {{LabelLoss::CE, "CE"}, {LabelLoss::BCE, "BCE"}, {LabelLoss::NONE, "NONE"}}};
constexpr std::array<std::pair<Method, const char*>, 6> kMethods{{{Method::KD, "KD"},
                                                                  {Method::DKD, "DKD"},
                                                                  {Method::DIST, "DIST"},
                                                                  {Method::HINT, "HINT"},
                                                                  {Method::CC, "CC"},
                                                                  {Method::RKD, "RKD"}}};
constexpr std::array<std::pair<SoftLoss, const char*>, 2> kSoftLosses{
    {{SoftLoss::KL, "KL"}, {SoftLoss::BKL, "BKL"}}};
constexpr std::array<std::pair<Split, const char*>, 3> kSplits{
    {{Split::TRAIN, "TRAIN"}, {Split::VAL, "VAL"}, {Split::TEST, "TEST"}}};
constexpr std::array<std::pair<DatasetLayout, const char*>, 2> kLayouts{
    {{DatasetLayout::CIFAR100_BINARY, "CIFAR100_BINARY"},
     {DatasetLayout::IMAGE_FOLDER, "IMAGE_FOLDER"}}};

// Strict reader: every key present in the tree must be one the caller consumes.
class Reader {
 public:
  Reader(const Json& tree, std::string prefix) : tree_(tree), prefix_(std::move(prefix)) {
    if (!tree_.is_object()) fail(ErrorKind::Config, "'" + prefix_ + "' must be an object");
  }
  void finish() const {
    for (const auto& [key, value] : tree_.items()) {
      if (!seen_.contains(key)) fail(ErrorKind::ConfigKey, "unknown key '" + path(key) + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!tree_.contains(key)) return;
    try {
      out = tree_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Config, "bad value for '" + path(key) + "': " + e.what());
    }
  }

  template <typename E, std::size_t N>
  void get_enum(const char* key, E& out, const std::array<std::pair<E, const char*>, N>& table) {
    seen_.insert(key);
    if (!tree_.contains(key)) return;
    if (!tree_.at(key).is_string()) fail(ErrorKind::Config, "'" + path(key) + "' must be a string");
    out = enum_from(table, tree_.at(key).get<std::string>(), key);
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    if (!tree_.contains(key) || tree_.at(key).is_null()) return nullptr;
    return &tree_.at(key);
  }

  std::string path(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

 private:
  const Json& tree_;
  std::string prefix_;
  std::set<std::string> seen_;
};

Json optimizer_params_json(const OptimizerParams& p) {
  return Json{{"beta1", p.beta1},       {"beta2", p.beta2},       {"eps", p.eps},
              {"momentum", p.momentum}, {"nesterov", p.nesterov}};
}

TrainingRecipe recipe_fields_from(const Json& tree, TrainingRecipe r, const std::string& prefix) {
  Reader in(tree, prefix);
  in.get("name", r.name);
  in.get("teacher_resolution", r.teacher_resolution);
  in.get("student_resolution", r.student_resolution);
  in.get("batch_size", r.batch_size);
  in.get_enum("optimizer", r.optimizer, kOptimizers);
  if (const Json* p = in.child("optimizer_params")) {
    Reader op(*p, in.path("optimizer_params"));
    op.get("beta1", r.optimizer_params.beta1);
    op.get("beta2", r.optimizer_params.beta2);
    op.get("eps", r.optimizer_params.eps);
    op.get("momentum", r.optimizer_params.momentum);
    op.get("nesterov", r.optimizer_params.nesterov);
    op.finish();
  }
  in.get("base_lr", r.base_lr);
  std::string schedule = "COSINE";
  in.get("lr_schedule", schedule);
  if (schedule != "COSINE") {
    fail(ErrorKind::Config, "only the COSINE lr_schedule is supported, got '" + schedule + "'");
  }
  in.get("warmup_epochs", r.warmup_epochs);
  in.get("amp", r.amp);
  in.get("ema", r.ema);
  in.get("ema_decay", r.ema_decay);
  in.get_enum("label_loss", r.label_loss, kLabelLosses);
  in.get("weight_decay", r.weight_decay);
  in.get("label_smoothing", r.label_smoothing);
  in.get("drop_path_rate", r.drop_path_rate);
  in.get("repeated_aug_count", r.repeated_aug_count);
  in.get("hflip", r.hflip);
  in.get("random_resized_crop", r.random_resized_crop);
  in.get("random_crop_padding", r.random_crop_padding);
  if (const Json* ra = in.child("rand_augment")) {
    RandAugmentSpec spec = r.rand_augment.value_or(RandAugmentSpec{});
    Reader rr(*ra, in.path("rand_augment"));
    rr.get("magnitude", spec.magnitude);
    rr.get("probability", spec.probability);
    rr.get("num_ops", spec.num_ops);
    rr.finish();
    r.rand_augment = spec;
  } else if (tree.contains("rand_augment")) {
    r.rand_augment.reset();
  }
  in.get("auto_augment", r.auto_augment);
  in.get("random_erasing_prob", r.random_erasing_prob);
  in.get("mixup_alpha", r.mixup_alpha);
  in.get("cutmix_alpha", r.cutmix_alpha);
  in.get("epochs", r.epochs);
  in.finish();
  return r;
}

}  // namespace

std::string to_string(OptimizerKind v) { return enum_name(kOptimizers, v); }
std::string to_string(LabelLoss v) { return enum_name(kLabelLosses, v); }
std::string to_string(Method v) { return enum_name(kMethods, v); }
std::string to_string(SoftLoss v) { return enum_name(kSoftLosses, v); }
std::string to_string(Split v) { return enum_name(kSplits, v); }
std::string to_string(DatasetLayout v) { return enum_name(kLayouts, v); }
Method method_from_string(const std::string& s) { return enum_from(kMethods, s, "method"); }
Split split_from_string(const std::string& s) {
  std::string upper = s;
  std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
  return enum_from(kSplits, upper, "split");
}

std::vector<std::string> builtin_recipe_names() { return {"A1", "A2", "B", "C"}; }

TrainingRecipe builtin_recipe(const std::string& name) {
  TrainingRecipe r;
  r.name = name;
  if (name == "A1" || name == "A2") {
    r.teacher_resolution = 224;
    r.student_resolution = 224;
    r.batch_size = 2048;
    r.optimizer = OptimizerKind::LAMB;
    r.optimizer_params.eps = 1e-6;
    r.base_lr = 5e-3;
    r.warmup_epochs = 5;
    r.amp = true;
    r.ema = false;
    r.label_loss = LabelLoss::BCE;
    r.drop_path_rate = 0.05;
    r.repeated_aug_count = 3;
    r.hflip = true;
    r.random_resized_crop = true;
    r.rand_augment = RandAugmentSpec{7, 0.5, 2};
    r.cutmix_alpha = 1.0;
    r.epochs = 300;
    if (name == "A2") {
      r.weight_decay = 0.03;
      r.label_smoothing = 0.0;
      r.mixup_alpha = 0.1;
    } else {
      r.weight_decay = 0.01;
      r.label_smoothing = 0.1;
      r.mixup_alpha = 0.2;
    }
    return r;
  }
  if (name == "B") {
    r.teacher_resolution = 224;
    r.student_resolution = 224;
    r.batch_size = 1024;
    r.optimizer = OptimizerKind::ADAMW;
    r.optimizer_params.eps = 1e-8;
    r.base_lr = 1e-3;
    r.warmup_epochs = 20;
    r.amp = true;
    r.label_loss = LabelLoss::CE;
    r.weight_decay = 5e-2;
    r.hflip = true;
    r.random_resized_crop = true;
    r.random_erasing_prob = 0.25;
    r.auto_augment = false;
    r.rand_augment = RandAugmentSpec{7, 0.5, 2};
    r.mixup_alpha = 0.1;
    r.cutmix_alpha = 1.0;
    r.epochs = 300;
    return r;
  }
  if (name == "C") {
    r.teacher_resolution = 32;
    r.student_resolution = 32;
    r.batch_size = 512;
    r.optimizer = OptimizerKind::SGD;
    r.optimizer_params.momentum = 0.9;
    r.base_lr = 5e-2;
    r.warmup_epochs = 0;
    r.amp = false;
    r.label_loss = LabelLoss::CE;
    r.weight_decay = 5e-4;
    r.hflip = true;
    r.random_resized_crop = false;
    r.random_crop_padding = 4;
    r.random_erasing_prob = 0.0;
    r.auto_augment = true;
    r.mixup_alpha = 0.1;
    r.cutmix_alpha = 0.0;
    r.epochs = 2400;
    return r;
  }
  std::string valid;
  for (const auto& n : builtin_recipe_names()) valid += (valid.empty() ? "" : ", ") + n;
  fail(ErrorKind::NotFound, "no builtin recipe '" + name + "' (valid: " + valid + ")");
}

std::vector<Violation> validate_recipe(const TrainingRecipe& r) {
  std::vector<Violation> out;
  auto check = [&](bool ok, const char* field, const char* rule) {
    if (!ok) out.push_back({field, rule});
  };
  check(r.teacher_resolution >= 1, "teacher_resolution", "teacher_resolution >= 1");
  check(r.student_resolution >= 1, "student_resolution", "student_resolution >= 1");
  check(r.batch_size >= 1, "batch_size", "batch_size >= 1");
  check(r.base_lr > 0, "base_lr", "base_lr > 0");
  check(r.warmup_epochs >= 0, "warmup_epochs", "warmup_epochs >= 0");
  // epochs = 0 is accepted as an evaluation-only run.
  check(r.epochs >= 0, "epochs", "epochs >= 0");
  check(r.epochs == 0 ? r.warmup_epochs == 0 : r.warmup_epochs < r.epochs, "warmup_epochs",
        "warmup_epochs < epochs");
  check(r.ema_decay >= 0 && r.ema_decay < 1, "ema_decay", "ema_decay in [0,1)");
  check(r.weight_decay >= 0, "weight_decay", "weight_decay >= 0");
  check(r.label_smoothing >= 0 && r.label_smoothing < 1, "label_smoothing",
        "label_smoothing in [0,1)");
  check(r.drop_path_rate >= 0 && r.drop_path_rate < 1, "drop_path_rate",
        "drop_path_rate in [0,1)");
  check(r.repeated_aug_count >= 1, "repeated_aug_count", "repeated_aug_count >= 1");
  check(r.random_crop_padding >= 0, "random_crop_padding", "random_crop_padding >= 0");
  if (r.rand_augment) {
    check(r.rand_augment->probability >= 0 && r.rand_augment->probability <= 1,
          "rand_augment.probability", "rand_augment.probability in [0,1]");
    check(r.rand_augment->magnitude >= 0 && r.rand_augment->magnitude <= 10,
          "rand_augment.magnitude", "rand_augment.magnitude in [0,10]");
    check(r.rand_augment->num_ops >= 1, "rand_augment.num_ops", "rand_augment.num_ops >= 1");
  }
  check(!(r.rand_augment && r.auto_augment), "rand_augment/auto_augment",
        "at most one of rand_augment and auto_augment may be active");
  check(r.random_erasing_prob >= 0 && r.random_erasing_prob <= 1, "random_erasing_prob",
        "random_erasing_prob in [0,1]");
  check(r.mixup_alpha >= 0, "mixup_alpha", "mixup_alpha >= 0");
  check(r.cutmix_alpha >= 0, "cutmix_alpha", "cutmix_alpha >= 0");
  check(r.optimizer_params.beta1 >= 0 && r.optimizer_params.beta1 < 1, "optimizer_params.beta1",
        "beta1 in [0,1)");
  check(r.optimizer_params.beta2 >= 0 && r.optimizer_params.beta2 < 1, "optimizer_params.beta2",
        "beta2 in [0,1)");
  check(r.optimizer_params.eps > 0, "optimizer_params.eps", "eps > 0");
  check(r.optimizer_params.momentum >= 0 && r.optimizer_params.momentum < 1,
        "optimizer_params.momentum", "momentum in [0,1)");
  return out;
}

std::vector<Violation> validate_job(const DistillJobSpec& s) {
  std::vector<Violation> out = validate_recipe(s.recipe);
  for (auto& v : out) v.field = "recipe." + v.field;
  auto check = [&](bool ok, const char* field, const char* rule) {
    if (!ok) out.push_back({field, rule});
  };
  check(!s.teacher.arch.empty(), "teacher.arch", "teacher must be named");
  check(!s.student.arch.empty(), "student.arch", "student must be named");
  check(s.alpha >= 0 && s.alpha <= 1, "alpha", "alpha in [0,1]");
  check(s.temperature > 0, "temperature", "temperature > 0");
  check(s.hint_weight >= 0, "hint_weight", "hint_weight >= 0");
  bool hint_method = s.method == Method::HINT || s.method == Method::CC || s.method == Method::RKD;
  check(!hint_method || !s.hint_layer_pairs.empty(), "hint_layer_pairs",
        "hint-based methods require at least one layer pair");
  check(!(s.alpha > 0 && s.recipe.label_loss == LabelLoss::NONE), "alpha",
        "alpha > 0 requires a label loss (recipe.label_loss != NONE)");
  check(s.dataset.class_count >= 2, "dataset.class_count", "class_count >= 2");
  check(s.dataset.resolution >= 1, "dataset.resolution", "resolution >= 1");
  check(s.dataset.mean.size() == 3 && s.dataset.std.size() == 3, "dataset.mean",
        "mean and std need three channels");
  check(s.dataset.eval_crop_pct > 0 && s.dataset.eval_crop_pct <= 1, "dataset.eval_crop_pct",
        "eval_crop_pct in (0,1]");
  if (s.subset) {
    check(s.subset->fraction > 0 && s.subset->fraction <= 1, "subset.fraction",
          "fraction in (0,1]");
  }
  if (s.unlabeled_stage) {
    check(s.unlabeled_stage->iterations >= 0, "unlabeled_stage.iterations", "iterations >= 0");
  }
  return out;
}

Json to_json(const TrainingRecipe& r) {
  Json j;
  j["name"] = r.name;
  j["teacher_resolution"] = r.teacher_resolution;
  j["student_resolution"] = r.student_resolution;
  j["batch_size"] = r.batch_size;
  j["optimizer"] = to_string(r.optimizer);
  j["optimizer_params"] = optimizer_params_json(r.optimizer_params);
  j["base_lr"] = r.base_lr;
  j["lr_schedule"] = "COSINE";
  j["warmup_epochs"] = r.warmup_epochs;
  j["amp"] = r.amp;
  j["ema"] = r.ema;
  j["ema_decay"] = r.ema_decay;
  j["label_loss"] = to_string(r.label_loss);
  j["weight_decay"] = r.weight_decay;
  j["label_smoothing"] = r.label_smoothing;
  j["drop_path_rate"] = r.drop_path_rate;
  j["repeated_aug_count"] = r.repeated_aug_count;
  j["hflip"] = r.hflip;
  j["random_resized_crop"] = r.random_resized_crop;
  j["random_crop_padding"] = r.random_crop_padding;
  if (r.rand_augment) {
    j["rand_augment"] = Json{{"magnitude", r.rand_augment->magnitude},
                             {"probability", r.rand_augment->probability},
                             {"num_ops", r.rand_augment->num_ops}};
  } else {
    j["rand_augment"] = nullptr;
  }
  j["auto_augment"] = r.auto_augment;
  j["random_erasing_prob"] = r.random_erasing_prob;
  j["mixup_alpha"] = r.mixup_alpha;
  j["cutmix_alpha"] = r.cutmix_alpha;
  j["epochs"] = r.epochs;
  return j;
}

Json to_json(const DatasetRef& d) {
  return Json{{"name", d.name},
              {"root", d.root},
              {"layout", to_string(d.layout)},
              {"split", to_string(d.split)},
              {"class_count", d.class_count},
              {"resolution", d.resolution},
              {"mean", d.mean},
              {"std", d.std},
              {"eval_crop_pct", d.eval_crop_pct}};
}

Json to_json(const DistillJobSpec& s) {
  Json j;
  j["teacher"] = Json{{"arch", s.teacher.arch}, {"checkpoint", s.teacher.checkpoint}};
  j["student"] = Json{{"arch", s.student.arch}, {"checkpoint", s.student.checkpoint}};
  j["method"] = to_string(s.method);
  j["alpha"] = s.alpha;
  j["temperature"] = s.temperature;
  j["soft_loss"] = to_string(s.soft_loss);
  j["dkd_alpha"] = s.dkd_alpha;
  j["dkd_beta"] = s.dkd_beta;
  j["dist_beta"] = s.dist_beta;
  j["dist_gamma"] = s.dist_gamma;
  j["hint_layer_pairs"] = Json::array();
  for (const auto& [a, b] : s.hint_layer_pairs) j["hint_layer_pairs"].push_back(Json::array({a, b}));
  j["hint_weight"] = s.hint_weight;
  j["rkd_distance_weight"] = s.rkd_distance_weight;
  j["rkd_angle_weight"] = s.rkd_angle_weight;
  j["dataset"] = to_json(s.dataset);
  if (s.subset) {
    j["subset"] = Json{{"fraction", s.subset->fraction},
                       {"stratified", s.subset->stratified},
                       {"seed", s.subset->seed}};
  } else {
    j["subset"] = nullptr;
  }
  j["recipe"] = to_json(s.recipe);
  j["seed"] = s.seed;
  if (s.unlabeled_stage) {
    j["unlabeled_stage"] = Json{{"pool", to_json(s.unlabeled_stage->pool)},
                                {"iterations", s.unlabeled_stage->iterations}};
  } else {
    j["unlabeled_stage"] = nullptr;
  }
  return j;
}

TrainingRecipe recipe_from_json(const Json& tree) {
  if (tree.is_string()) return builtin_recipe(tree.get<std::string>());
  if (!tree.is_object()) fail(ErrorKind::Config, "'recipe' must be a name or an object");
  TrainingRecipe base;
  Json fields = tree;
  if (tree.contains("base")) {
    base = builtin_recipe(tree.at("base").get<std::string>());
    fields.erase("base");
  }
  return recipe_fields_from(fields, base, "recipe");
}

DatasetRef dataset_from_json(const Json& tree) {
  DatasetRef d;
  Reader in(tree, "dataset");
  in.get("name", d.name);
  in.get("root", d.root);
  in.get_enum("layout", d.layout, kLayouts);
  std::string split = to_string(d.split);
  in.get("split", split);
  d.split = split_from_string(split);
  in.get("class_count", d.class_count);
  in.get("resolution", d.resolution);
  in.get("mean", d.mean);
  in.get("std", d.std);
  in.get("eval_crop_pct", d.eval_crop_pct);
  in.finish();
  return d;
}

DistillJobSpec job_from_json(const Json& tree) {
  DistillJobSpec s;
  Reader in(tree, "");
  auto model = [&](const char* key, ModelRef& out) {
    if (const Json* m = in.child(key)) {
      if (m->is_string()) {
        out.arch = m->get<std::string>();
        return;
      }
      Reader mr(*m, key);
      mr.get("arch", out.arch);
      mr.get("checkpoint", out.checkpoint);
      mr.finish();
    }
  };
  model("teacher", s.teacher);
  model("student", s.student);
  in.get_enum("method", s.method, kMethods);
  in.get("alpha", s.alpha);
  in.get("temperature", s.temperature);
  in.get_enum("soft_loss", s.soft_loss, kSoftLosses);
  in.get("dkd_alpha", s.dkd_alpha);
  in.get("dkd_beta", s.dkd_beta);
  in.get("dist_beta", s.dist_beta);
  in.get("dist_gamma", s.dist_gamma);
  if (const Json* pairs = in.child("hint_layer_pairs")) {
    if (!pairs->is_array()) fail(ErrorKind::Config, "hint_layer_pairs must be a list");
    for (const auto& p : *pairs) {
      if (!p.is_array() || p.size() != 2) {
        fail(ErrorKind::Config, "each hint layer pair must be [student_layer, teacher_layer]");
      }
      s.hint_layer_pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
    }
  }
  in.get("hint_weight", s.hint_weight);
  in.get("rkd_distance_weight", s.rkd_distance_weight);
  in.get("rkd_angle_weight", s.rkd_angle_weight);
  if (const Json* d = in.child("dataset")) s.dataset = dataset_from_json(*d);
  if (const Json* sub = in.child("subset")) {
    SubsetSpec spec;
    Reader sr(*sub, "subset");
    sr.get("fraction", spec.fraction);
    sr.get("stratified", spec.stratified);
    sr.get("seed", spec.seed);
    sr.finish();
    s.subset = spec;
  }
  if (const Json* r = in.child("recipe")) s.recipe = recipe_from_json(*r);
  in.get("seed", s.seed);
  if (const Json* u = in.child("unlabeled_stage")) {
    UnlabeledStage stage;
    Reader ur(*u, "unlabeled_stage");
    if (const Json* pool = ur.child("pool")) stage.pool = dataset_from_json(*pool);
    ur.get("iterations", stage.iterations);
    ur.finish();
    s.unlabeled_stage = stage;
  }
  in.finish();
  return s;
}

namespace {

void throw_if_invalid(const DistillJobSpec& spec) {
  auto violations = validate_job(spec);
  if (violations.empty()) return;
  std::string msg = "invalid job:";
  for (const auto& v : violations) msg += " [" + v.field + ": " + v.rule + "]";
  fail(ErrorKind::Config, msg);
}

Json default_for_optional(const std::string& key) {
  if (key == "subset") {
    SubsetSpec s;
    return Json{{"fraction", s.fraction}, {"stratified", s.stratified}, {"seed", s.seed}};
  }
  if (key == "unlabeled_stage") {
    return Json{{"pool", to_json(DatasetRef{})}, {"iterations", 0}};
  }
  if (key == "rand_augment") {
    RandAugmentSpec r;
    return Json{{"magnitude", r.magnitude}, {"probability", r.probability}, {"num_ops", r.num_ops}};
  }
  return nullptr;
}

}  // namespace

DistillJobSpec parse_job(const std::string& text) {
  Json tree;
  try {
    tree = Json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  DistillJobSpec spec = job_from_json(tree);
  throw_if_invalid(spec);
  return spec;
}

std::string serialize_job(const DistillJobSpec& spec) { return to_json(spec).dump(2) + "\n"; }

DistillJobSpec merge_overrides(const DistillJobSpec& base, const std::map<std::string, Json>& overrides) {
  if (overrides.empty()) return base;
  Json tree = to_json(base);
  for (const auto& [path, value] : overrides) {
    Json* node = &tree;
    std::string walked;
    std::size_t start = 0;
    while (true) {
      std::size_t dot = path.find('.', start);
      std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      walked += (walked.empty() ? "" : ".") + key;
      if (!node->is_object() || !node->contains(key)) {
        fail(ErrorKind::ConfigKey, "unknown override path '" + path + "' (no field '" + walked + "')");
      }
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      Json& next = (*node)[key];
      if (next.is_null()) {
        next = default_for_optional(key);
        if (next.is_null()) fail(ErrorKind::ConfigKey, "cannot descend into '" + walked + "'");
      }
      node = &next;
      start = dot + 1;
    }
  }
  DistillJobSpec merged = job_from_json(tree);
  throw_if_invalid(merged);
  return merged;
}

DistillJobSpec merge_overrides(const DistillJobSpec& base,
                               const std::map<std::string, std::string>& overrides) {
  std::map<std::string, Json> parsed;
  for (const auto& [key, text] : overrides) {
    Json value = Json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = text;
    parsed.emplace(key, std::move(value));
  }
  return merge_overrides(base, parsed);
}

std::pair<std::string, std::string> parse_set_argument(const std::string& arg) {
  auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail(ErrorKind::Config, "--set expects path=value, got '" + arg + "'");
  }
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

std::string describe_recipe(const TrainingRecipe& r) {
  std::ostringstream os;
  Json j = to_json(r);
  for (const auto& [key, value] : j.items()) {
    os << key << ": ";
    if (value.is_null()) {
      os << "-";
    } else if (value.is_string()) {
      os << value.get<std::string>();
    } else {
      os << value.dump();
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace kd
