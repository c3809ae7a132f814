// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "kdkit/losses.hpp"

namespace kd {

/// Dense NCHW float batch.
struct ImageBatch {
  std::int64_t n = 0, c = 3, h = 0, w = 0;
  std::vector<float> data;

  std::int64_t per_sample() const { return c * h * w; }
  float* sample(std::int64_t i) { return data.data() + i * per_sample(); }
  const float* sample(std::int64_t i) const { return data.data() + i * per_sample(); }
};

enum class MixKind { NONE, MIXUP, CUTMIX };

/// Half-open pixel box [y0, y1) × [x0, x1).
struct Box {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  int area() const { return (y1 - y0) * (x1 - x0); }
};

struct MixedBatch {
  ImageBatch images;
  HardTargets targets;
  MixKind kind = MixKind::NONE;
  /// Weight of the unpermuted sample. For CutMix this is 1 - box area / (H·W).
  double lambda = 1.0;
  std::vector<std::int64_t> permutation;
};

/// x' = λ x + (1-λ) x[perm], y' = λ y + (1-λ) y[perm].
MixedBatch mixup_with(const ImageBatch& batch, const HardTargets& targets, std::int64_t num_classes,
                      double lambda, std::span<const std::int64_t> permutation);
/// Pastes box from x[perm] into x; targets mix with the area-adjusted λ.
MixedBatch cutmix_with(const ImageBatch& batch, const HardTargets& targets, std::int64_t num_classes,
                       const Box& box, std::span<const std::int64_t> permutation);

/// Box centered uniformly in the image with sides sqrt(1-λ)·(H, W), clipped
/// to the image bounds.
Box cutmix_box(int height, int width, double lambda, std::mt19937_64& rng);

/// λ ~ Beta(alpha, alpha) with the batch's mirror permutation. alpha = 0
/// returns the batch unchanged with kind NONE.
MixedBatch apply_mixup(const ImageBatch& batch, const HardTargets& targets, std::int64_t num_classes,
                       double alpha, std::mt19937_64& rng);
MixedBatch apply_cutmix(const ImageBatch& batch, const HardTargets& targets, std::int64_t num_classes,
                        double alpha, std::mt19937_64& rng);

/// Batch-level mixing per the recipe. With both alphas positive, one of the two
/// is chosen with probability 0.5 per batch. With both zero the batch passes
/// through with its targets unchanged.
class BatchMixer {
 public:
  BatchMixer(double mixup_alpha, double cutmix_alpha, std::int64_t num_classes);

  bool enabled() const { return mixup_alpha_ > 0 || cutmix_alpha_ > 0; }
  MixedBatch operator()(const ImageBatch& batch, const HardTargets& targets,
                        std::mt19937_64& rng) const;

 private:
  double mixup_alpha_, cutmix_alpha_;
  std::int64_t num_classes_;
};

/// Draws from Beta(alpha, alpha).
double sample_beta(double alpha, std::mt19937_64& rng);

}  // namespace kd
