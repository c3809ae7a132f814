// SPDX-License-Identifier: Apache-2.0
#include "kdkit/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "kdkit/errors.hpp"

namespace kd {

namespace ops {
namespace {

constexpr int kFill = 128;

cv::Mat lut(const cv::Mat& img, const std::array<std::uint8_t, 256>& table) {
  cv::Mat t(1, 256, CV_8U);
  for (int i = 0; i < 256; ++i) t.at<std::uint8_t>(i) = table[static_cast<std::size_t>(i)];
  cv::Mat out;
  cv::LUT(img, t, out);
  return out;
}

cv::Mat blend(const cv::Mat& degenerate, const cv::Mat& img, double factor) {
  cv::Mat out;
  cv::addWeighted(img, factor, degenerate, 1.0 - factor, 0.0, out, CV_8U);
  return out;
}

cv::Mat grayscale3(const cv::Mat& img) {
  cv::Mat gray, out;
  cv::cvtColor(img, gray, cv::COLOR_RGB2GRAY);
  cv::cvtColor(gray, out, cv::COLOR_GRAY2RGB);
  return out;
}

cv::Mat affine(const cv::Mat& img, const cv::Mat& m) {
  cv::Mat out;
  cv::warpAffine(img, out, m, img.size(), cv::INTER_NEAREST, cv::BORDER_CONSTANT,
                 cv::Scalar(kFill, kFill, kFill));
  return out;
}

}  // namespace

cv::Mat auto_contrast(const cv::Mat& img) {
  std::vector<cv::Mat> ch;
  cv::split(img, ch);
  for (auto& c : ch) {
    double lo = 0, hi = 0;
    cv::minMaxLoc(c, &lo, &hi);
    if (hi > lo) c.convertTo(c, CV_8U, 255.0 / (hi - lo), -lo * 255.0 / (hi - lo));
  }
  cv::Mat out;
  cv::merge(ch, out);
  return out;
}

cv::Mat equalize(const cv::Mat& img) {
  std::vector<cv::Mat> ch;
  cv::split(img, ch);
  for (auto& c : ch) cv::equalizeHist(c, c);
  cv::Mat out;
  cv::merge(ch, out);
  return out;
}

cv::Mat invert(const cv::Mat& img) {
  cv::Mat out;
  cv::bitwise_not(img, out);
  return out;
}

cv::Mat posterize(const cv::Mat& img, int bits) {
  bits = std::clamp(bits, 0, 8);
  const auto mask = static_cast<std::uint8_t>(0xFF << (8 - bits));
  std::array<std::uint8_t, 256> t{};
  for (int i = 0; i < 256; ++i) t[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i & mask);
  return lut(img, t);
}

cv::Mat solarize(const cv::Mat& img, double threshold) {
  std::array<std::uint8_t, 256> t{};
  for (int i = 0; i < 256; ++i) t[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i >= threshold ? 255 - i : i);
  return lut(img, t);
}

cv::Mat solarize_add(const cv::Mat& img, int add, int threshold) {
  std::array<std::uint8_t, 256> t{};
  for (int i = 0; i < 256; ++i) t[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i < threshold ? std::min(255, i + add) : i);
  return lut(img, t);
}

cv::Mat color(const cv::Mat& img, double factor) { return blend(grayscale3(img), img, factor); }

cv::Mat contrast(const cv::Mat& img, double factor) {
  cv::Mat gray;
  cv::cvtColor(img, gray, cv::COLOR_RGB2GRAY);
  const double mean = std::round(cv::mean(gray)[0]);
  cv::Mat degenerate(img.size(), img.type(), cv::Scalar(mean, mean, mean));
  return blend(degenerate, img, factor);
}

cv::Mat brightness(const cv::Mat& img, double factor) {
  return blend(cv::Mat::zeros(img.size(), img.type()), img, factor);
}

cv::Mat sharpness(const cv::Mat& img, double factor) {
  cv::Mat kernel = (cv::Mat_<float>(3, 3) << 1, 1, 1, 1, 5, 1, 1, 1, 1) / 13.0f;
  cv::Mat smooth;
  cv::filter2D(img, smooth, -1, kernel, cv::Point(-1, -1), 0, cv::BORDER_REPLICATE);
  // Border pixels keep their original value.
  if (img.rows > 2 && img.cols > 2) {
    cv::Mat degenerate = img.clone();
    smooth(cv::Rect(1, 1, img.cols - 2, img.rows - 2)).copyTo(degenerate(cv::Rect(1, 1, img.cols - 2, img.rows - 2)));
    return blend(degenerate, img, factor);
  }
  return img.clone();
}

cv::Mat rotate(const cv::Mat& img, double degrees) {
  const cv::Point2f center(static_cast<float>(img.cols) / 2.0f, static_cast<float>(img.rows) / 2.0f);
  return affine(img, cv::getRotationMatrix2D(center, degrees, 1.0));
}

cv::Mat shear_x(const cv::Mat& img, double shear) {
  cv::Mat m = (cv::Mat_<double>(2, 3) << 1, shear, 0, 0, 1, 0);
  return affine(img, m);
}

cv::Mat shear_y(const cv::Mat& img, double shear) {
  cv::Mat m = (cv::Mat_<double>(2, 3) << 1, 0, 0, shear, 1, 0);
  return affine(img, m);
}

cv::Mat translate_x(const cv::Mat& img, double pixels) {
  cv::Mat m = (cv::Mat_<double>(2, 3) << 1, 0, pixels, 0, 1, 0);
  return affine(img, m);
}

cv::Mat translate_y(const cv::Mat& img, double pixels) {
  cv::Mat m = (cv::Mat_<double>(2, 3) << 1, 0, 0, 0, 1, pixels);
  return affine(img, m);
}

}  // namespace ops

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
bool coin(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }
int randint(Rng& rng, int lo, int hi_inclusive) {
  return std::uniform_int_distribution<int>(lo, hi_inclusive)(rng);
}

void require_u8(const cv::Mat& img, const std::string& stage) {
  if (img.type() != CV_8UC3) fail(ErrorKind::Shape, stage + " expects an 8-bit RGB image");
}

class RandomResizedCrop final : public Transform {
 public:
  explicit RandomResizedCrop(int size) : size_(size) {}
  std::string name() const override { return "random_resized_crop"; }
  Json params() const override {
    return {{"size", size_}, {"scale", {0.08, 1.0}}, {"ratio", {3.0 / 4.0, 4.0 / 3.0}}};
  }
  bool randomized() const override { return true; }
  void apply(cv::Mat& img, Rng& rng) const override {
    require_u8(img, name());
    const double area = static_cast<double>(img.rows) * img.cols;
    const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
    cv::Rect box;
    bool found = false;
    for (int attempt = 0; attempt < 10 && !found; ++attempt) {
      const double target = area * uniform(rng, 0.08, 1.0);
      const double ratio = std::exp(uniform(rng, log_lo, log_hi));
      const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
      const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
      if (w > 0 && h > 0 && w <= img.cols && h <= img.rows) {
        box = cv::Rect(randint(rng, 0, img.cols - w), randint(rng, 0, img.rows - h), w, h);
        found = true;
      }
    }
    if (!found) {
      // Fallback: central crop clamped to the ratio range.
      const double in_ratio = static_cast<double>(img.cols) / img.rows;
      int w = img.cols, h = img.rows;
      if (in_ratio < 3.0 / 4.0) h = static_cast<int>(std::lround(w / (3.0 / 4.0)));
      else if (in_ratio > 4.0 / 3.0) w = static_cast<int>(std::lround(h * (4.0 / 3.0)));
      box = cv::Rect((img.cols - w) / 2, (img.rows - h) / 2, w, h);
    }
    cv::Mat out;
    cv::resize(img(box), out, cv::Size(size_, size_), 0, 0, cv::INTER_CUBIC);
    img = out;
  }

 private:
  int size_;
};

class PadRandomCrop final : public Transform {
 public:
  PadRandomCrop(int size, int padding) : size_(size), padding_(padding) {}
  std::string name() const override { return "random_crop"; }
  Json params() const override { return {{"size", size_}, {"padding", padding_}}; }
  bool randomized() const override { return true; }
  void apply(cv::Mat& img, Rng& rng) const override {
    require_u8(img, name());
    cv::Mat src = img;
    if (img.rows != size_ || img.cols != size_) {
      cv::resize(img, src, cv::Size(size_, size_), 0, 0, cv::INTER_CUBIC);
    }
    cv::Mat padded;
    cv::copyMakeBorder(src, padded, padding_, padding_, padding_, padding_, cv::BORDER_CONSTANT,
                       cv::Scalar(0, 0, 0));
    const int x = randint(rng, 0, 2 * padding_);
    const int y = randint(rng, 0, 2 * padding_);
    img = padded(cv::Rect(x, y, size_, size_)).clone();
  }

 private:
  int size_, padding_;
};

class Resize final : public Transform {
 public:
  explicit Resize(int shorter_side) : size_(shorter_side) {}
  std::string name() const override { return "resize"; }
  Json params() const override { return {{"shorter_side", size_}, {"interpolation", "bicubic"}}; }
  bool randomized() const override { return false; }
  void apply(cv::Mat& img, Rng&) const override {
    require_u8(img, name());
    const int shorter = std::min(img.rows, img.cols);
    if (shorter == size_) return;
    const double scale = static_cast<double>(size_) / shorter;
    const int w = std::max(size_, static_cast<int>(std::lround(img.cols * scale)));
    const int h = std::max(size_, static_cast<int>(std::lround(img.rows * scale)));
    cv::Mat out;
    cv::resize(img, out, cv::Size(img.rows <= img.cols ? w : size_, img.rows <= img.cols ? size_ : h), 0,
               0, cv::INTER_CUBIC);
    img = out;
  }

 private:
  int size_;
};

class CenterCrop final : public Transform {
 public:
  explicit CenterCrop(int size) : size_(size) {}
  std::string name() const override { return "center_crop"; }
  Json params() const override { return {{"size", size_}}; }
  bool randomized() const override { return false; }
  void apply(cv::Mat& img, Rng&) const override {
    if (img.rows < size_ || img.cols < size_) {
      cv::Mat out;
      cv::resize(img, out, cv::Size(std::max(size_, img.cols), std::max(size_, img.rows)), 0, 0,
                 cv::INTER_CUBIC);
      img = out;
    }
    const int x = (img.cols - size_) / 2, y = (img.rows - size_) / 2;
    img = img(cv::Rect(x, y, size_, size_)).clone();
  }

 private:
  int size_;
};

class HorizontalFlip final : public Transform {
 public:
  std::string name() const override { return "horizontal_flip"; }
  Json params() const override { return {{"p", 0.5}}; }
  bool randomized() const override { return true; }
  void apply(cv::Mat& img, Rng& rng) const override {
    if (coin(rng, 0.5)) cv::flip(img, img, 1);
  }
};

enum class Op {
  AutoContrast, Equalize, Invert, Rotate, Posterize, Solarize, SolarizeAdd, Color, Contrast,
  Brightness, Sharpness, ShearX, ShearY, TranslateX, TranslateY
};

double signed_rand(Rng& rng, double v) { return coin(rng, 0.5) ? -v : v; }

class RandAugment final : public Transform {
 public:
  explicit RandAugment(RandAugmentSpec spec) : spec_(spec) {}
  std::string name() const override { return "rand_augment"; }
  Json params() const override {
    return {{"magnitude", spec_.magnitude}, {"probability", spec_.probability}, {"num_ops", spec_.num_ops}};
  }
  bool randomized() const override { return true; }
  void apply(cv::Mat& img, Rng& rng) const override {
    require_u8(img, name());
    static constexpr std::array kOps{Op::AutoContrast, Op::Equalize,  Op::Invert,    Op::Rotate,
                                     Op::Posterize,    Op::Solarize,  Op::SolarizeAdd, Op::Color,
                                     Op::Contrast,     Op::Brightness, Op::Sharpness, Op::ShearX,
                                     Op::ShearY,       Op::TranslateX, Op::TranslateY};
    const double level = std::clamp(static_cast<double>(spec_.magnitude), 0.0, 10.0) / 10.0;
    for (int k = 0; k < spec_.num_ops; ++k) {
      const Op op = kOps[static_cast<std::size_t>(randint(rng, 0, static_cast<int>(kOps.size()) - 1))];
      if (!coin(rng, spec_.probability)) continue;
      img = run(op, img, level, rng);
    }
  }

  static cv::Mat run(Op op, const cv::Mat& img, double level, Rng& rng) {
    const double enhance = level * 1.8 + 0.1;
    switch (op) {
      case Op::AutoContrast: return ops::auto_contrast(img);
      case Op::Equalize: return ops::equalize(img);
      case Op::Invert: return ops::invert(img);
      case Op::Rotate: return ops::rotate(img, signed_rand(rng, 30.0 * level));
      case Op::Posterize: return ops::posterize(img, static_cast<int>(level * 4) + 4);
      case Op::Solarize: return ops::solarize(img, static_cast<int>(level * 256));
      case Op::SolarizeAdd: return ops::solarize_add(img, static_cast<int>(level * 110));
      case Op::Color: return ops::color(img, enhance);
      case Op::Contrast: return ops::contrast(img, enhance);
      case Op::Brightness: return ops::brightness(img, enhance);
      case Op::Sharpness: return ops::sharpness(img, enhance);
      case Op::ShearX: return ops::shear_x(img, signed_rand(rng, 0.3 * level));
      case Op::ShearY: return ops::shear_y(img, signed_rand(rng, 0.3 * level));
      case Op::TranslateX: return ops::translate_x(img, signed_rand(rng, 0.45 * level * img.cols));
      case Op::TranslateY: return ops::translate_y(img, signed_rand(rng, 0.45 * level * img.rows));
    }
    return img;
  }

 private:
  RandAugmentSpec spec_;
};

struct SubPolicyOp {
  Op op;
  double prob;
  int magnitude;  // bin in [0, 9]
};

// CIFAR-10 AutoAugment policy, magnitude bins over 10 levels.
constexpr std::array<std::array<SubPolicyOp, 2>, 25> kCifarPolicy{{
    {{{Op::Invert, 0.1, 0}, {Op::Contrast, 0.2, 6}}},
    {{{Op::Rotate, 0.7, 2}, {Op::TranslateX, 0.3, 9}}},
    {{{Op::Sharpness, 0.8, 1}, {Op::Sharpness, 0.9, 3}}},
    {{{Op::ShearY, 0.5, 8}, {Op::TranslateY, 0.7, 9}}},
    {{{Op::AutoContrast, 0.5, 0}, {Op::Equalize, 0.9, 0}}},
    {{{Op::ShearY, 0.2, 7}, {Op::Posterize, 0.3, 7}}},
    {{{Op::Color, 0.4, 3}, {Op::Brightness, 0.6, 7}}},
    {{{Op::Sharpness, 0.3, 9}, {Op::Brightness, 0.7, 9}}},
    {{{Op::Equalize, 0.6, 0}, {Op::Equalize, 0.5, 0}}},
    {{{Op::Contrast, 0.6, 7}, {Op::Sharpness, 0.6, 5}}},
    {{{Op::Color, 0.7, 7}, {Op::TranslateX, 0.5, 8}}},
    {{{Op::Equalize, 0.3, 0}, {Op::AutoContrast, 0.4, 0}}},
    {{{Op::TranslateY, 0.4, 3}, {Op::Sharpness, 0.2, 6}}},
    {{{Op::Brightness, 0.9, 6}, {Op::Color, 0.2, 8}}},
    {{{Op::Solarize, 0.5, 2}, {Op::Invert, 0.0, 0}}},
    {{{Op::Equalize, 0.2, 0}, {Op::AutoContrast, 0.6, 0}}},
    {{{Op::Equalize, 0.2, 0}, {Op::Equalize, 0.6, 0}}},
    {{{Op::Color, 0.9, 9}, {Op::Equalize, 0.6, 0}}},
    {{{Op::AutoContrast, 0.8, 0}, {Op::Solarize, 0.2, 8}}},
    {{{Op::Brightness, 0.1, 3}, {Op::Color, 0.7, 0}}},
    {{{Op::Solarize, 0.4, 5}, {Op::AutoContrast, 0.9, 0}}},
    {{{Op::TranslateY, 0.9, 9}, {Op::TranslateY, 0.7, 9}}},
    {{{Op::AutoContrast, 0.9, 0}, {Op::Solarize, 0.8, 3}}},
    {{{Op::Equalize, 0.8, 0}, {Op::Invert, 0.1, 0}}},
    {{{Op::TranslateY, 0.7, 9}, {Op::AutoContrast, 0.9, 0}}},
}};

class AutoAugment final : public Transform {
 public:
  std::string name() const override { return "auto_augment"; }
  Json params() const override { return {{"policy", "cifar10"}}; }
  bool randomized() const override { return true; }
  void apply(cv::Mat& img, Rng& rng) const override {
    require_u8(img, name());
    const auto& sub = kCifarPolicy[static_cast<std::size_t>(randint(rng, 0, static_cast<int>(kCifarPolicy.size()) - 1))];
    for (const SubPolicyOp& s : sub) {
      if (coin(rng, s.prob)) img = run(s, img, rng);
    }
  }

 private:
  static cv::Mat run(const SubPolicyOp& s, const cv::Mat& img, Rng& rng) {
    const double t = s.magnitude / 9.0;
    switch (s.op) {
      case Op::ShearX: return ops::shear_x(img, signed_rand(rng, 0.3 * t));
      case Op::ShearY: return ops::shear_y(img, signed_rand(rng, 0.3 * t));
      case Op::TranslateX: return ops::translate_x(img, signed_rand(rng, 150.0 / 331.0 * img.cols * t));
      case Op::TranslateY: return ops::translate_y(img, signed_rand(rng, 150.0 / 331.0 * img.rows * t));
      case Op::Rotate: return ops::rotate(img, signed_rand(rng, 30.0 * t));
      case Op::Color: return ops::color(img, 1.0 + signed_rand(rng, 0.9 * t));
      case Op::Contrast: return ops::contrast(img, 1.0 + signed_rand(rng, 0.9 * t));
      case Op::Brightness: return ops::brightness(img, 1.0 + signed_rand(rng, 0.9 * t));
      case Op::Sharpness: return ops::sharpness(img, 1.0 + signed_rand(rng, 0.9 * t));
      case Op::Posterize:
        return ops::posterize(img, 8 - static_cast<int>(std::lround(s.magnitude / (9.0 / 4.0))));
      case Op::Solarize: return ops::solarize(img, 255.0 * (1.0 - t));
      case Op::AutoContrast: return ops::auto_contrast(img);
      case Op::Equalize: return ops::equalize(img);
      case Op::Invert: return ops::invert(img);
      case Op::SolarizeAdd: return ops::solarize_add(img, static_cast<int>(110 * t));
    }
    return img;
  }
};

class Normalize final : public Transform {
 public:
  Normalize(std::vector<double> mean, std::vector<double> std) : mean_(std::move(mean)), std_(std::move(std)) {
    if (mean_.size() != 3 || std_.size() != 3) fail(ErrorKind::Config, "normalize needs 3-channel mean/std");
  }
  std::string name() const override { return "normalize"; }
  Json params() const override { return {{"mean", mean_}, {"std", std_}}; }
  bool randomized() const override { return false; }
  void apply(cv::Mat& img, Rng&) const override {
    require_u8(img, name());
    cv::Mat f;
    img.convertTo(f, CV_32FC3, 1.0 / 255.0);
    f -= cv::Scalar(mean_[0], mean_[1], mean_[2]);
    cv::divide(f, cv::Scalar(std_[0], std_[1], std_[2]), f);
    img = f;
  }

 private:
  std::vector<double> mean_, std_;
};

// Erases one random rectangle with per-pixel normal noise.
class RandomErasing final : public Transform {
 public:
  explicit RandomErasing(double p) : p_(p) {}
  std::string name() const override { return "random_erasing"; }
  Json params() const override {
    return {{"p", p_}, {"area", {0.02, 1.0 / 3.0}}, {"ratio", {0.3, 1.0 / 0.3}}, {"mode", "pixel"}};
  }
  bool randomized() const override { return true; }
  void apply(cv::Mat& img, Rng& rng) const override {
    if (img.type() != CV_32FC3) fail(ErrorKind::Shape, "random_erasing expects a normalized image");
    if (!coin(rng, p_)) return;
    const double area = static_cast<double>(img.rows) * img.cols;
    const double log_lo = std::log(0.3), log_hi = std::log(1.0 / 0.3);
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double target = area * uniform(rng, 0.02, 1.0 / 3.0);
      const double ratio = std::exp(uniform(rng, log_lo, log_hi));
      const int h = static_cast<int>(std::lround(std::sqrt(target * ratio)));
      const int w = static_cast<int>(std::lround(std::sqrt(target / ratio)));
      if (w < img.cols && h < img.rows && w > 0 && h > 0) {
        const int top = randint(rng, 0, img.rows - h);
        const int left = randint(rng, 0, img.cols - w);
        std::normal_distribution<float> noise(0.0f, 1.0f);
        for (int y = top; y < top + h; ++y) {
          auto* row = img.ptr<cv::Vec3f>(y);
          for (int x = left; x < left + w; ++x) {
            for (int c = 0; c < 3; ++c) row[x][c] = noise(rng);
          }
        }
        return;
      }
    }
  }

 private:
  double p_;
};

}  // namespace

std::vector<std::string> TransformPipeline::names() const {
  std::vector<std::string> out;
  for (const auto& s : stages_) out.push_back(s->name());
  return out;
}

bool TransformPipeline::deterministic() const {
  return std::none_of(stages_.begin(), stages_.end(), [](const auto& s) { return s->randomized(); });
}

const Transform* TransformPipeline::find(const std::string& name) const {
  for (const auto& s : stages_) {
    if (s->name() == name) return s.get();
  }
  return nullptr;
}

std::vector<float> TransformPipeline::operator()(const cv::Mat& rgb, Rng& rng) const {
  if (rgb.empty() || rgb.type() != CV_8UC3) fail(ErrorKind::Shape, "pipeline input must be 8-bit RGB");
  cv::Mat img = rgb.clone();
  for (const auto& s : stages_) s->apply(img, rng);
  if (img.type() == CV_8UC3) img.convertTo(img, CV_32FC3, 1.0 / 255.0);
  const int h = img.rows, w = img.cols;
  std::vector<float> chw(static_cast<std::size_t>(3 * h * w));
  for (int y = 0; y < h; ++y) {
    const auto* row = img.ptr<cv::Vec3f>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) chw[static_cast<std::size_t>((c * h + y) * w + x)] = row[x][c];
    }
  }
  return chw;
}

TransformPipeline build_augmentation(const TrainingRecipe& recipe, bool train, int resolution,
                                     const std::vector<double>& mean, const std::vector<double>& std,
                                     double eval_crop_pct) {
  if (resolution <= 0) fail(ErrorKind::Config, "resolution must be positive");
  std::vector<std::shared_ptr<const Transform>> stages;
  if (!train) {
    if (!(eval_crop_pct > 0 && eval_crop_pct <= 1)) fail(ErrorKind::Config, "eval crop_pct must be in (0,1]");
    const int scale = static_cast<int>(std::floor(resolution / eval_crop_pct));
    stages.push_back(std::make_shared<Resize>(scale));
    stages.push_back(std::make_shared<CenterCrop>(resolution));
    stages.push_back(std::make_shared<Normalize>(mean, std));
    return TransformPipeline(std::move(stages));
  }
  if (recipe.random_resized_crop) {
    stages.push_back(std::make_shared<RandomResizedCrop>(resolution));
  } else if (recipe.random_crop_padding > 0) {
    stages.push_back(std::make_shared<PadRandomCrop>(resolution, recipe.random_crop_padding));
  } else {
    stages.push_back(std::make_shared<Resize>(resolution));
    stages.push_back(std::make_shared<CenterCrop>(resolution));
  }
  if (recipe.hflip) stages.push_back(std::make_shared<HorizontalFlip>());
  if (recipe.rand_augment) stages.push_back(std::make_shared<RandAugment>(*recipe.rand_augment));
  if (recipe.auto_augment) stages.push_back(std::make_shared<AutoAugment>());
  stages.push_back(std::make_shared<Normalize>(mean, std));
  if (recipe.random_erasing_prob > 0) stages.push_back(std::make_shared<RandomErasing>(recipe.random_erasing_prob));
  return TransformPipeline(std::move(stages));
}

}  // namespace kd
