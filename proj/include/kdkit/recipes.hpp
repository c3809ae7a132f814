// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace kd {

using Json = nlohmann::ordered_json;

enum class OptimizerKind { LAMB, ADAMW, SGD };
enum class LrSchedule { COSINE };
enum class LabelLoss { CE, BCE, NONE };
enum class Method { KD, DKD, DIST, HINT, CC, RKD };
enum class SoftLoss { KL, BKL };
enum class Split { TRAIN, VAL, TEST };
enum class DatasetLayout { CIFAR100_BINARY, IMAGE_FOLDER };

struct OptimizerParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double momentum = 0.9;
  bool nesterov = false;

  bool operator==(const OptimizerParams&) const = default;
};

struct RandAugmentSpec {
  int magnitude = 7;
  double probability = 0.5;
  int num_ops = 2;

  bool operator==(const RandAugmentSpec&) const = default;
};

/// One named training strategy. Field names double as config keys.
struct TrainingRecipe {
  std::string name;
  int teacher_resolution = 224;
  int student_resolution = 224;
  int batch_size = 256;
  OptimizerKind optimizer = OptimizerKind::SGD;
  OptimizerParams optimizer_params;
  double base_lr = 0.1;
  LrSchedule lr_schedule = LrSchedule::COSINE;
  int warmup_epochs = 0;
  bool amp = false;
  bool ema = false;
  double ema_decay = 0.9999;
  LabelLoss label_loss = LabelLoss::CE;
  double weight_decay = 0.0;
  double label_smoothing = 0.0;
  double drop_path_rate = 0.0;
  int repeated_aug_count = 1;
  bool hflip = true;
  bool random_resized_crop = false;
  // Zero-padded random crop, the usual small-image alternative to
  // random_resized_crop.
  int random_crop_padding = 0;
  std::optional<RandAugmentSpec> rand_augment;
  bool auto_augment = false;
  double random_erasing_prob = 0.0;
  double mixup_alpha = 0.0;
  double cutmix_alpha = 0.0;
  int epochs = 1;

  bool operator==(const TrainingRecipe&) const = default;
};

struct Violation {
  std::string field;
  std::string rule;

  bool operator==(const Violation&) const = default;
};

std::vector<std::string> builtin_recipe_names();

/// The A1/A2 ImageNet strategies and the B (ImageNet) / C (CIFAR-100)
/// stronger strategies. Throws NotFound for anything else.
TrainingRecipe builtin_recipe(const std::string& name);

std::vector<Violation> validate_recipe(const TrainingRecipe& recipe);

struct ModelRef {
  std::string arch;
  std::string checkpoint;  // empty = random init (students) / required for teachers

  bool operator==(const ModelRef&) const = default;
};

struct DatasetRef {
  std::string name = "cifar100";
  std::string root;
  DatasetLayout layout = DatasetLayout::CIFAR100_BINARY;
  Split split = Split::TRAIN;
  int class_count = 100;
  int resolution = 32;
  std::vector<double> mean{0.5071, 0.4865, 0.4409};
  std::vector<double> std{0.2673, 0.2564, 0.2762};
  // Resize-then-center-crop ratio used by the eval transform.
  double eval_crop_pct = 1.0;

  bool operator==(const DatasetRef&) const = default;
};

struct SubsetSpec {
  double fraction = 1.0;
  bool stratified = true;
  std::uint64_t seed = 0;

  bool operator==(const SubsetSpec&) const = default;
};

struct UnlabeledStage {
  DatasetRef pool;
  std::int64_t iterations = 0;

  bool operator==(const UnlabeledStage&) const = default;
};

/// One distillation experiment.
struct DistillJobSpec {
  ModelRef teacher;
  ModelRef student;
  Method method = Method::KD;
  double alpha = 0.5;
  double temperature = 1.0;
  SoftLoss soft_loss = SoftLoss::KL;
  double dkd_alpha = 1.0;
  double dkd_beta = 2.0;
  double dist_beta = 1.0;
  double dist_gamma = 1.0;
  std::vector<std::pair<std::string, std::string>> hint_layer_pairs;
  double hint_weight = 1.0;
  double rkd_distance_weight = 25.0;
  double rkd_angle_weight = 50.0;
  DatasetRef dataset;
  std::optional<SubsetSpec> subset;
  TrainingRecipe recipe;
  std::uint64_t seed = 0;
  std::optional<UnlabeledStage> unlabeled_stage;

  bool operator==(const DistillJobSpec&) const = default;
};

std::vector<Violation> validate_job(const DistillJobSpec& spec);

// Serialization to the key tree used by config files and overrides.
Json to_json(const TrainingRecipe& recipe);
Json to_json(const DatasetRef& ref);
Json to_json(const DistillJobSpec& spec);
TrainingRecipe recipe_from_json(const Json& tree);
DatasetRef dataset_from_json(const Json& tree);
DistillJobSpec job_from_json(const Json& tree);

/// Parses config text (JSON) into a job and validates it. A "recipe" entry may
/// be a builtin name, or an object with "base" naming a builtin plus fields.
DistillJobSpec parse_job(const std::string& text);
std::string serialize_job(const DistillJobSpec& spec);

/// Applies dotted-path overrides (e.g. "recipe.base_lr"). Values are parsed as
/// JSON literals when possible, otherwise taken as strings.
DistillJobSpec merge_overrides(const DistillJobSpec& base,
                               const std::map<std::string, std::string>& overrides);
DistillJobSpec merge_overrides(const DistillJobSpec& base,
                               const std::map<std::string, Json>& overrides);

/// Splits "path=value" as given to --set.
std::pair<std::string, std::string> parse_set_argument(const std::string& arg);

std::string to_string(OptimizerKind v);
std::string to_string(LabelLoss v);
std::string to_string(Method v);
std::string to_string(SoftLoss v);
std::string to_string(Split v);
std::string to_string(DatasetLayout v);
Method method_from_string(const std::string& s);
Split split_from_string(const std::string& s);

/// Human-readable listing used by `recipes show`.
std::string describe_recipe(const TrainingRecipe& recipe);

}  // namespace kd
