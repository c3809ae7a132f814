// SPDX-License-Identifier: Apache-2.0
// Small generated datasets for tests that exercise the full pipeline.
#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "kdkit/data.hpp"

namespace synth {

// Class c draws stripes whose color, angle and frequency depend on c, over
// per-sample noise, so small networks can separate classes quickly.
inline cv::Mat class_image(int cls, int size, std::mt19937_64& rng) {
  std::mt19937_64 crng(0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(cls + 1));
  std::uniform_int_distribution<int> col(30, 225);
  const cv::Vec3b fg(static_cast<uchar>(col(crng)), static_cast<uchar>(col(crng)), static_cast<uchar>(col(crng)));
  const cv::Vec3b bg(static_cast<uchar>(255 - fg[0]), static_cast<uchar>(255 - fg[1]), static_cast<uchar>(255 - fg[2]));
  const double angle = std::uniform_real_distribution<double>(0, 3.14159)(crng);
  const double freq = 2.0 + (cls % 5);
  std::normal_distribution<double> noise(0.0, 12.0);
  const double phase = std::uniform_real_distribution<double>(0, 6.283)(rng);
  cv::Mat img(size, size, CV_8UC3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double t = (std::cos(angle) * x + std::sin(angle) * y) / size;
      const bool on = std::sin(6.283 * freq * t + phase) > 0;
      const cv::Vec3b& base = on ? fg : bg;
      cv::Vec3b px;
      for (int c = 0; c < 3; ++c) px[c] = cv::saturate_cast<uchar>(base[c] + noise(rng));
      img.at<cv::Vec3b>(y, x) = px;
    }
  }
  return img;
}

/// CIFAR-100 binary archive with `per_class_train` / `per_class_test` images
/// for each of the first `classes` labels.
inline void write_cifar(const std::filesystem::path& root, int per_class_train, int per_class_test,
                        int classes = 100, std::uint64_t seed = 7) {
  std::filesystem::create_directories(root);
  std::mt19937_64 rng(seed);
  for (const auto& [file, per_class] : {std::pair{"train.bin", per_class_train}, std::pair{"test.bin", per_class_test}}) {
    std::vector<cv::Mat> images;
    std::vector<std::int64_t> labels;
    for (int i = 0; i < per_class; ++i) {
      for (int c = 0; c < classes; ++c) {
        images.push_back(class_image(c, 32, rng));
        labels.push_back(c);
      }
    }
    kd::write_cifar100_binary(root / file, images, labels);
  }
}

/// ImageFolder tree root/{train,val}/<class>/<n>.png.
inline void write_image_folder(const std::filesystem::path& root, int classes, int per_class_train,
                               int per_class_val, int size = 48, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  char name[32];
  for (const auto& [split, per_class] : {std::pair{"train", per_class_train}, std::pair{"val", per_class_val}}) {
    for (int c = 0; c < classes; ++c) {
      std::snprintf(name, sizeof name, "n%05d", c);
      const auto dir = root / split / name;
      std::filesystem::create_directories(dir);
      for (int i = 0; i < per_class; ++i) {
        cv::Mat rgb = class_image(c % 97, size, rng), bgr;
        cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
        cv::imwrite((dir / (std::to_string(i) + ".png")).string(), bgr);
      }
    }
  }
}

}  // namespace synth
