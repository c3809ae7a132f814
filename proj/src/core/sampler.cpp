// SPDX-License-Identifier: Apache-2.0
#include "kdkit/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>
#include <numeric>
#include <unordered_set>

#include "kdkit/errors.hpp"

namespace kd {

std::int64_t steps_per_epoch(std::int64_t dataset_size, std::int64_t batch_size) {
  if (batch_size <= 0) fail(ErrorKind::Config, "batch_size must be positive");
  if (dataset_size <= 0) return 0;
  return std::max<std::int64_t>(1, dataset_size / batch_size);
}

namespace {

// Yields indices from successive seeded permutations of [0, size).
class PermutationStream {
 public:
  PermutationStream(std::int64_t size, std::uint64_t seed, std::int64_t epoch, bool shuffle)
      : size_(size), seed_(seed), epoch_(epoch), shuffle_(shuffle) {
    refill();
  }

  std::int64_t next() {
    if (pos_ == order_.size()) refill();
    return order_[pos_++];
  }

 private:
  void refill() {
    order_.resize(static_cast<std::size_t>(size_));
    std::iota(order_.begin(), order_.end(), 0);
    if (shuffle_) {
      auto rng = make_rng({seed_, static_cast<std::uint64_t>(epoch_), round_, 0x5a3dULL});
      std::shuffle(order_.begin(), order_.end(), rng);
    }
    ++round_;
    pos_ = 0;
  }

  std::int64_t size_;
  std::uint64_t seed_;
  std::int64_t epoch_;
  bool shuffle_;
  std::uint64_t round_ = 0;
  std::vector<std::int64_t> order_;
  std::size_t pos_ = 0;
};

std::vector<std::vector<std::int64_t>> make_batches(std::int64_t size, std::int64_t batch_size,
                                                    int repeats, std::uint64_t seed,
                                                    std::int64_t epoch, bool shuffle) {
  if (repeats < 1) fail(ErrorKind::Config, "repeated_aug_count must be >= 1");
  const std::int64_t steps = steps_per_epoch(size, batch_size);
  std::vector<std::vector<std::int64_t>> out;
  if (steps == 0) return out;
  const std::int64_t distinct = (batch_size + repeats - 1) / repeats;
  PermutationStream stream(size, seed, epoch, shuffle);
  out.reserve(static_cast<std::size_t>(steps));
  for (std::int64_t s = 0; s < steps; ++s) {
    std::vector<std::int64_t> picked;
    std::unordered_set<std::int64_t> seen;
    const bool can_be_distinct = distinct <= size;
    while (static_cast<std::int64_t>(picked.size()) < distinct) {
      const std::int64_t idx = stream.next();
      if (can_be_distinct && !seen.insert(idx).second) continue;
      picked.push_back(idx);
    }
    std::vector<std::int64_t> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (std::int64_t idx : picked) {
      for (int r = 0; r < repeats && static_cast<std::int64_t>(batch.size()) < batch_size; ++r) {
        batch.push_back(idx);
      }
    }
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace

std::vector<std::vector<std::int64_t>> repeated_aug_batches(std::int64_t dataset_size,
                                                            std::int64_t batch_size, int repeats,
                                                            std::uint64_t seed, std::int64_t epoch) {
  return make_batches(dataset_size, batch_size, repeats, seed, epoch, true);
}

BatchLoader::BatchLoader(std::shared_ptr<const Dataset> dataset, TransformPipeline pipeline,
                         LoaderOptions options)
    : dataset_(std::move(dataset)), pipeline_(std::move(pipeline)), options_(options) {
  if (!dataset_) fail(ErrorKind::Data, "loader needs a dataset");
  if (options_.batch_size <= 0) fail(ErrorKind::Config, "batch_size must be positive");
  if (options_.num_workers < 1) options_.num_workers = 1;
}

std::int64_t BatchLoader::steps_per_epoch() const {
  if (!options_.shuffle) {
    return (dataset_->size() + options_.batch_size - 1) / options_.batch_size;
  }
  return kd::steps_per_epoch(dataset_->size(), options_.batch_size);
}

std::vector<std::int64_t> BatchLoader::indices_for(std::int64_t epoch, std::int64_t step) const {
  if (!options_.shuffle) {
    // Sequential evaluation order; the last batch may be short.
    const std::int64_t begin = step * options_.batch_size;
    const std::int64_t end = std::min(dataset_->size(), begin + options_.batch_size);
    std::vector<std::int64_t> out;
    for (std::int64_t i = begin; i < end; ++i) out.push_back(i);
    return out;
  }
  // Rebuilding the epoch's batches keeps batch() stateless; the cost is linear
  // in the dataset size and negligible next to decoding.
  auto all = make_batches(dataset_->size(), options_.batch_size, options_.repeats, options_.seed,
                          epoch, true);
  return all.at(static_cast<std::size_t>(step));
}

LabeledBatch BatchLoader::batch(std::int64_t epoch, std::int64_t step) const {
  if (step < 0 || step >= steps_per_epoch()) fail(ErrorKind::Data, "step outside the epoch");
  LabeledBatch out;
  out.indices = indices_for(epoch, step);
  const auto n = static_cast<std::int64_t>(out.indices.size());
  out.images.n = n;
  for (std::int64_t slot = 0; slot < n; ++slot) {
    const std::int64_t idx = out.indices[static_cast<std::size_t>(slot)];
    auto rng = make_rng({options_.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step),
                         static_cast<std::uint64_t>(slot)});
    std::vector<float> chw = pipeline_(dataset_->image(idx), rng);
    if (slot == 0) {
      out.images.c = 3;
      const auto hw = static_cast<std::int64_t>(chw.size()) / 3;
      // Pipelines always finish on a square crop.
      out.images.h = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(hw))));
      out.images.w = hw / out.images.h;
      out.images.data.resize(static_cast<std::size_t>(n * out.images.per_sample()));
    } else if (static_cast<std::int64_t>(chw.size()) != out.images.per_sample()) {
      fail(ErrorKind::Shape, "transformed samples differ in size within a batch");
    }
    std::copy(chw.begin(), chw.end(), out.images.sample(slot));
    out.labels.push_back(dataset_->label(idx));
  }
  return out;
}

void BatchLoader::for_epoch(std::int64_t epoch, std::int64_t start_step,
                            const std::function<bool(std::int64_t, LabeledBatch&&)>& fn) const {
  const std::int64_t steps = steps_per_epoch();
  std::deque<std::future<LabeledBatch>> pending;
  std::int64_t next = start_step;
  auto launch = [&] {
    while (next < steps && static_cast<int>(pending.size()) < options_.num_workers) {
      const std::int64_t s = next++;
      if (options_.num_workers == 1) {
        pending.push_back(std::async(std::launch::deferred, [this, epoch, s] { return batch(epoch, s); }));
      } else {
        pending.push_back(std::async(std::launch::async, [this, epoch, s] { return batch(epoch, s); }));
      }
    }
  };
  launch();
  for (std::int64_t s = start_step; s < steps; ++s) {
    LabeledBatch b = pending.front().get();
    pending.pop_front();
    launch();
    if (!fn(s, std::move(b))) break;
  }
  for (auto& f : pending) {
    if (f.valid()) f.wait();
  }
}

namespace {

std::shared_ptr<const Dataset> non_empty(std::shared_ptr<const Dataset> pool) {
  if (!pool || pool->size() == 0) fail(ErrorKind::Data, "unlabeled pool is empty");
  return pool;
}

}  // namespace

UnlabeledStream::UnlabeledStream(std::shared_ptr<const Dataset> pool, TransformPipeline pipeline,
                                 LoaderOptions options)
    : loader_(non_empty(std::move(pool)), std::move(pipeline), options) {}

ImageBatch UnlabeledStream::next() {
  const std::int64_t per_epoch = loader_.steps_per_epoch();
  const std::int64_t epoch = position_ / per_epoch;
  const std::int64_t step = position_ % per_epoch;
  ++position_;
  return loader_.batch(epoch, step).images;
}

}  // namespace kd
