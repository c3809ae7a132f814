// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "kdkit/augment.hpp"
#include "kdkit/data.hpp"
#include "kdkit/mixing.hpp"

namespace kd {

/// floor(size / batch_size), at least 1 for a non-empty dataset.
std::int64_t steps_per_epoch(std::int64_t dataset_size, std::int64_t batch_size);

/// Index batches for one epoch. Each batch draws ceil(batch_size / repeats)
/// distinct indices and repeats every one of them `repeats` times (truncated
/// to batch_size). The order is a pure function of (seed, epoch).
std::vector<std::vector<std::int64_t>> repeated_aug_batches(std::int64_t dataset_size,
                                                            std::int64_t batch_size, int repeats,
                                                            std::uint64_t seed, std::int64_t epoch);

struct LabeledBatch {
  ImageBatch images;
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> indices;
};

struct LoaderOptions {
  std::int64_t batch_size = 64;
  int repeats = 1;
  bool shuffle = true;
  int num_workers = 1;
  std::uint64_t seed = 0;
};

/// Batches of transformed samples. batch(epoch, step) is a pure function of
/// its arguments and the seed, so the number of workers never changes the
/// output and a run can resume at any step.
class BatchLoader {
 public:
  BatchLoader(std::shared_ptr<const Dataset> dataset, TransformPipeline pipeline, LoaderOptions options);

  std::int64_t steps_per_epoch() const;
  std::int64_t dataset_size() const { return dataset_->size(); }
  const Dataset& dataset() const { return *dataset_; }
  const LoaderOptions& options() const { return options_; }

  LabeledBatch batch(std::int64_t epoch, std::int64_t step) const;

  /// Calls fn for steps [start_step, steps_per_epoch()) in order, preparing up
  /// to num_workers batches ahead. fn returning false stops the epoch.
  void for_epoch(std::int64_t epoch, std::int64_t start_step,
                 const std::function<bool(std::int64_t, LabeledBatch&&)>& fn) const;

 private:
  std::vector<std::int64_t> indices_for(std::int64_t epoch, std::int64_t step) const;

  std::shared_ptr<const Dataset> dataset_;
  TransformPipeline pipeline_;
  LoaderOptions options_;
};

/// Endless stream over an unlabeled pool. Throws DataError on an empty pool.
class UnlabeledStream {
 public:
  UnlabeledStream(std::shared_ptr<const Dataset> pool, TransformPipeline pipeline, LoaderOptions options);

  ImageBatch next();
  std::int64_t position() const { return position_; }
  void seek(std::int64_t position) { position_ = position; }

 private:
  BatchLoader loader_;
  std::int64_t position_ = 0;
};

}  // namespace kd
