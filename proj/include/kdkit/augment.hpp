// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "kdkit/recipes.hpp"

namespace kd {

using Rng = std::mt19937_64;

/// One stage of a per-sample transform list. Stages before "normalize" see
/// 8-bit RGB (CV_8UC3); "normalize" converts to CV_32FC3 and later stages see
/// normalized floats.
class Transform {
 public:
  virtual ~Transform() = default;
  virtual std::string name() const = 0;
  virtual Json params() const { return Json::object(); }
  virtual bool randomized() const = 0;
  virtual void apply(cv::Mat& image, Rng& rng) const = 0;
};

class TransformPipeline {
 public:
  TransformPipeline() = default;
  explicit TransformPipeline(std::vector<std::shared_ptr<const Transform>> stages)
      : stages_(std::move(stages)) {}

  const std::vector<std::shared_ptr<const Transform>>& stages() const { return stages_; }
  std::vector<std::string> names() const;
  bool deterministic() const;
  const Transform* find(const std::string& name) const;

  /// Runs every stage and returns a CHW float image.
  std::vector<float> operator()(const cv::Mat& rgb, Rng& rng) const;

 private:
  std::vector<std::shared_ptr<const Transform>> stages_;
};

/// Training: crop → horizontal flip → rand/auto augment → normalize → random
/// erasing. Eval: resize → center crop → normalize. Batch-level mixing is
/// applied afterwards by BatchMixer.
TransformPipeline build_augmentation(const TrainingRecipe& recipe, bool train, int resolution,
                                     const std::vector<double>& mean, const std::vector<double>& std,
                                     double eval_crop_pct = 1.0);

// Individual image operations on 8-bit RGB, exposed for testing.
namespace ops {
cv::Mat auto_contrast(const cv::Mat& img);
cv::Mat equalize(const cv::Mat& img);
cv::Mat invert(const cv::Mat& img);
cv::Mat posterize(const cv::Mat& img, int bits);
cv::Mat solarize(const cv::Mat& img, double threshold);
cv::Mat solarize_add(const cv::Mat& img, int add, int threshold = 128);
cv::Mat color(const cv::Mat& img, double factor);
cv::Mat contrast(const cv::Mat& img, double factor);
cv::Mat brightness(const cv::Mat& img, double factor);
cv::Mat sharpness(const cv::Mat& img, double factor);
cv::Mat rotate(const cv::Mat& img, double degrees);
cv::Mat shear_x(const cv::Mat& img, double shear);
cv::Mat shear_y(const cv::Mat& img, double shear);
cv::Mat translate_x(const cv::Mat& img, double pixels);
cv::Mat translate_y(const cv::Mat& img, double pixels);
}  // namespace ops

}  // namespace kd
