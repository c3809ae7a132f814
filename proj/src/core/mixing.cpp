// SPDX-License-Identifier: Apache-2.0
#include "kdkit/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdkit/errors.hpp"

namespace kd {
namespace {

void check_permutation(std::span<const std::int64_t> perm, std::int64_t n) {
  if (static_cast<std::int64_t>(perm.size()) != n) fail(ErrorKind::Shape, "permutation length != batch size");
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (std::int64_t p : perm) {
    if (p < 0 || p >= n || seen[static_cast<std::size_t>(p)]) fail(ErrorKind::Shape, "not a permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
}

HardTargets mix_targets(const HardTargets& targets, std::int64_t num_classes, double lambda,
                        std::span<const std::int64_t> perm) {
  const Matrix dense = targets.dense(num_classes);
  Matrix out(dense.rows(), dense.cols());
  for (Eigen::Index i = 0; i < dense.rows(); ++i) {
    out.row(i) = lambda * dense.row(i) + (1.0 - lambda) * dense.row(perm[static_cast<std::size_t>(i)]);
  }
  return HardTargets(std::move(out));
}

}  // namespace

MixedBatch mixup_with(const ImageBatch& batch, const HardTargets& targets, std::int64_t num_classes,
                      double lambda, std::span<const std::int64_t> permutation) {
  if (targets.size() != batch.n) fail(ErrorKind::Shape, "targets/batch size mismatch");
  if (!(lambda >= 0 && lambda <= 1)) fail(ErrorKind::Config, "mixup lambda outside [0,1]");
  check_permutation(permutation, batch.n);
  MixedBatch out;
  out.images = batch;
  const std::int64_t d = batch.per_sample();
  const auto lam = static_cast<float>(lambda);
  for (std::int64_t i = 0; i < batch.n; ++i) {
    const float* a = batch.sample(i);
    const float* b = batch.sample(permutation[static_cast<std::size_t>(i)]);
    float* dst = out.images.sample(i);
    for (std::int64_t k = 0; k < d; ++k) dst[k] = lam * a[k] + (1.0f - lam) * b[k];
  }
  out.targets = mix_targets(targets, num_classes, lambda, permutation);
  out.kind = MixKind::MIXUP;
  out.lambda = lambda;
  out.permutation.assign(permutation.begin(), permutation.end());
  return out;
}

MixedBatch cutmix_with(const ImageBatch& batch, const HardTargets& targets, std::int64_t num_classes,
                       const Box& box, std::span<const std::int64_t> permutation) {
  if (targets.size() != batch.n) fail(ErrorKind::Shape, "targets/batch size mismatch");
  if (box.y0 < 0 || box.x0 < 0 || box.y1 > batch.h || box.x1 > batch.w || box.y0 > box.y1 ||
      box.x0 > box.x1) {
    fail(ErrorKind::Shape, "cutmix box outside the image");
  }
  check_permutation(permutation, batch.n);
  MixedBatch out;
  out.images = batch;
  for (std::int64_t i = 0; i < batch.n; ++i) {
    const float* src = batch.sample(permutation[static_cast<std::size_t>(i)]);
    float* dst = out.images.sample(i);
    for (std::int64_t c = 0; c < batch.c; ++c) {
      for (int y = box.y0; y < box.y1; ++y) {
        const std::int64_t off = (c * batch.h + y) * batch.w;
        std::copy(src + off + box.x0, src + off + box.x1, dst + off + box.x0);
      }
    }
  }
  const double lambda = 1.0 - static_cast<double>(box.area()) / static_cast<double>(batch.h * batch.w);
  out.targets = mix_targets(targets, num_classes, lambda, permutation);
  out.kind = MixKind::CUTMIX;
  out.lambda = lambda;
  out.permutation.assign(permutation.begin(), permutation.end());
  return out;
}

Box cutmix_box(int height, int width, double lambda, std::mt19937_64& rng) {
  const double ratio = std::sqrt(std::clamp(1.0 - lambda, 0.0, 1.0));
  const int cut_h = static_cast<int>(height * ratio);
  const int cut_w = static_cast<int>(width * ratio);
  const int cy = std::uniform_int_distribution<int>(0, height - 1)(rng);
  const int cx = std::uniform_int_distribution<int>(0, width - 1)(rng);
  Box b;
  b.y0 = std::clamp(cy - cut_h / 2, 0, height);
  b.y1 = std::clamp(cy + cut_h / 2, 0, height);
  b.x0 = std::clamp(cx - cut_w / 2, 0, width);
  b.x1 = std::clamp(cx + cut_w / 2, 0, width);
  return b;
}

double sample_beta(double alpha, std::mt19937_64& rng) {
  if (!(alpha > 0)) fail(ErrorKind::Config, "beta alpha must be positive");
  std::gamma_distribution<double> g(alpha, 1.0);
  const double a = g(rng), b = g(rng);
  if (a + b <= 0) return 0.5;
  return a / (a + b);
}

BatchMixer::BatchMixer(double mixup_alpha, double cutmix_alpha, std::int64_t num_classes)
    : mixup_alpha_(mixup_alpha), cutmix_alpha_(cutmix_alpha), num_classes_(num_classes) {
  if (mixup_alpha < 0 || cutmix_alpha < 0) fail(ErrorKind::Config, "mixing alphas must be >= 0");
}

MixedBatch BatchMixer::operator()(const ImageBatch& batch, const HardTargets& targets,
                                  std::mt19937_64& rng) const {
  if (!enabled()) {
    MixedBatch out;
    out.images = batch;
    out.targets = targets;
    return out;
  }
  bool use_cutmix = cutmix_alpha_ > 0;
  if (mixup_alpha_ > 0 && cutmix_alpha_ > 0) {
    use_cutmix = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5;
  }
  std::vector<std::int64_t> perm(static_cast<std::size_t>(batch.n));
  std::iota(perm.begin(), perm.end(), 0);
  // Pair each sample with its mirror in the batch, as timm does.
  std::reverse(perm.begin(), perm.end());
  if (use_cutmix) {
    const double lam = sample_beta(cutmix_alpha_, rng);
    return cutmix_with(batch, targets, num_classes_, cutmix_box(static_cast<int>(batch.h), static_cast<int>(batch.w), lam, rng), perm);
  }
  return mixup_with(batch, targets, num_classes_, sample_beta(mixup_alpha_, rng), perm);
}

MixedBatch apply_mixup(const ImageBatch& batch, const HardTargets& targets, std::int64_t num_classes,
                       double alpha, std::mt19937_64& rng) {
  return BatchMixer(alpha, 0.0, num_classes)(batch, targets, rng);
}

MixedBatch apply_cutmix(const ImageBatch& batch, const HardTargets& targets, std::int64_t num_classes,
                        double alpha, std::mt19937_64& rng) {
  return BatchMixer(0.0, alpha, num_classes)(batch, targets, rng);
}

}  // namespace kd
