// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "kdkit/report.hpp"
#include "kdkit/sampler.hpp"
#include "kdkit/schedule.hpp"
#include "kdkit/train/models.hpp"

namespace kd::train {

struct StepRecord {
  std::int64_t step = 0;  // global step, counted across both stages
  int epoch = 0;
  std::string stage;  // "unlabeled" or "labeled"
  double loss_total = 0.0;
  double loss_hard = 0.0;
  double loss_soft = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  std::filesystem::path runs_root = "runs";
  std::string run_id;  // empty: derived from the job hash and start time
  /// Stop after this many global steps and write ckpt-last; -1 runs to the end.
  std::int64_t max_steps = -1;
  /// A ckpt-* directory of the same job to continue from.
  std::filesystem::path resume_from;
  bool deterministic = true;
  int num_workers = 1;
  /// Caps evaluation batches per pass; -1 evaluates the whole split.
  std::int64_t eval_max_batches = -1;
  bool verbose = false;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::string run_id;
  std::filesystem::path run_dir;
  Json manifest;
  std::optional<MetricsRecord> final_eval;
  std::vector<StepRecord> steps;
  std::int64_t global_step = 0;
};

/// Runs one distillation job: the optional soft-label-only stage on the
/// unlabeled pool first, then the labeled stage. Writes
/// runs/<run_id>/{manifest,metrics.jsonl,ckpt-*}. epochs = 0 evaluates the
/// student without training. Non-finite losses abort with NumericError after
/// writing runs/<run_id>/abort.json.
TrainResult train_distill(const DistillJobSpec& spec, const TrainOptions& options = {});

/// train_distill for jobs that carry an unlabeled stage; DataError if the pool
/// is missing or empty.
TrainResult two_stage_distill(const DistillJobSpec& spec, const TrainOptions& options = {});

/// Running top-1/top-5/cross-entropy over labeled batches.
class EvalCounts {
 public:
  void add(const torch::Tensor& logits, const torch::Tensor& labels);
  std::int64_t samples() const { return samples_; }
  /// Percentages, as in the metrics file.
  MetricsRecord record() const;

 private:
  std::int64_t samples_ = 0, correct1_ = 0, correct5_ = 0;
  double loss_sum_ = 0.0;
};

/// Evaluates with the loader's (deterministic) transforms in inference mode.
/// Throws DataError on an empty or unlabeled split.
MetricsRecord evaluate(Classifier& model, const BatchLoader& loader, std::int64_t max_batches = -1);

/// Eval-transform loader over the given split of the job's dataset.
BatchLoader eval_loader(const DistillJobSpec& spec, Split split, std::int64_t batch_size = 0,
                        int num_workers = 1);

/// Loads model weights from a checkpoint directory, a run directory (its
/// ckpt-best, else ckpt-last) or a weights file.
std::filesystem::path resolve_weights(const std::filesystem::path& ref);

/// Frozen teacher in inference mode. A teacher without a checkpoint keeps its
/// random initialization (useful for smoke runs only).
ClassifierPtr load_teacher(const ModelRef& ref, int num_classes);

/// The student saved in a checkpoint, with the job of its run.
struct LoadedCheckpoint {
  ClassifierPtr model;
  DistillJobSpec job;
  std::filesystem::path dir;
};
LoadedCheckpoint load_checkpoint_model(const std::filesystem::path& ckpt);

/// Stable 16-hex-digit hash of the serialized job.
std::string job_hash(const DistillJobSpec& spec);

/// Copies parameters and buffers between two models of the same architecture.
void copy_model_state(Classifier& dst, Classifier& src);

}  // namespace kd::train
