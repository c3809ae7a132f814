// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kdkit/losses.hpp"

namespace kd {

/// A named intermediate activation, stored NCHW. Vector features use H = W = 1.
struct FeatureMap {
  std::string layer_id;
  std::int64_t n = 0, c = 0, h = 1, w = 1;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(std::string id, std::int64_t n, std::int64_t c, std::int64_t h = 1, std::int64_t w = 1);
  static FeatureMap from_matrix(std::string id, const Matrix& rows);

  std::int64_t spatial() const { return h * w; }
  std::int64_t per_sample() const { return c * h * w; }
  double& at(std::int64_t i, std::int64_t ch, std::int64_t y, std::int64_t x) {
    return values[static_cast<std::size_t>(((i * c + ch) * h + y) * w + x)];
  }
  double at(std::int64_t i, std::int64_t ch, std::int64_t y, std::int64_t x) const {
    return values[static_cast<std::size_t>(((i * c + ch) * h + y) * w + x)];
  }
  /// N × (C·H·W) view copy.
  Matrix flatten() const;
};

enum class ProjectorKind { LINEAR, CONV1x1 };
enum class ProjectorNorm { BATCH_NORM, NONE };
enum class HintMetric { L1, L2 };

struct ProjectorSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  ProjectorKind kind = ProjectorKind::CONV1x1;
  ProjectorNorm normalization = ProjectorNorm::NONE;
};

/// Channel-mixing transform applied per spatial location, optionally followed
/// by batch normalization computed over (N, H, W).
class Projector {
 public:
  explicit Projector(ProjectorSpec spec);
  static Projector identity(std::int64_t channels);

  const ProjectorSpec& spec() const { return spec_; }
  Matrix& weight() { return weight_; }  // out × in
  Vector& bias() { return bias_; }
  Vector& gamma() { return gamma_; }
  Vector& beta() { return beta_; }

  FeatureMap forward(const FeatureMap& input) const;
  /// Gradient w.r.t. the input given d(loss)/d(output).
  FeatureMap backward(const FeatureMap& input, const FeatureMap& grad_output) const;

  static constexpr double kBatchNormEps = 1e-5;

 private:
  ProjectorSpec spec_;
  Matrix weight_;
  Vector bias_, gamma_, beta_;
};

/// Bilinear resize of the spatial grid (half-pixel centers, edge clamped).
FeatureMap resize_bilinear(const FeatureMap& input, std::int64_t out_h, std::int64_t out_w);
/// Adjoint of resize_bilinear: maps an output-grid gradient back to the input grid.
FeatureMap resize_bilinear_adjoint(const FeatureMap& grad_output, std::int64_t in_h,
                                   std::int64_t in_w);

/// Mean elementwise |a-b| or (a-b)² between projected features, after the
/// larger grid is bilinearly downsampled to the smaller one.
double hint_loss(const FeatureMap& f_s, const FeatureMap& f_t, const Projector& proj_s,
                 const Projector& proj_t, HintMetric metric, FeatureMap* grad_f_s = nullptr);

/// Mean squared difference of the row-normalized N×N batch Gram matrices.
double cc_loss(const FeatureMap& f_s, const FeatureMap& f_t, FeatureMap* grad_f_s = nullptr);

struct RkdTerms {
  double distance = 0.0;
  double angle = 0.0;
  double total = 0.0;
};

/// distance_weight · smoothL1(normalized pairwise distances) +
/// angle_weight · smoothL1(cosines over all ordered triples).
RkdTerms rkd_loss(const FeatureMap& f_s, const FeatureMap& f_t, double distance_weight = 25.0,
                  double angle_weight = 50.0, FeatureMap* grad_f_s = nullptr);

}  // namespace kd
