// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "kdkit/recipes.hpp"

namespace kd {

/// Deterministic generator seeded from an arbitrary tuple such as
/// (seed, epoch, step, slot).
std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> parts);

/// Random-access image classification data. Images are 8-bit RGB.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::int64_t size() const = 0;
  virtual int class_count() const = 0;
  /// -1 for unlabeled samples.
  virtual std::int64_t label(std::int64_t index) const = 0;
  virtual cv::Mat image(std::int64_t index) const = 0;

  std::vector<std::int64_t> labels() const;
};

/// CIFAR-100 binary layout: <root>/train.bin and <root>/test.bin, records of
/// [coarse label, fine label, 1024 R, 1024 G, 1024 B]. VAL reads test.bin.
class Cifar100Binary final : public Dataset {
 public:
  static constexpr std::int64_t kRecordBytes = 2 + 3 * 32 * 32;
  Cifar100Binary(const std::filesystem::path& root, Split split);

  std::int64_t size() const override { return static_cast<std::int64_t>(labels_.size()); }
  int class_count() const override { return 100; }
  std::int64_t label(std::int64_t index) const override;
  cv::Mat image(std::int64_t index) const override;

  static std::filesystem::path split_file(const std::filesystem::path& root, Split split);

 private:
  std::vector<std::uint8_t> pixels_;
  std::vector<std::int64_t> labels_;
};

/// <root>/<split>/<class name>/<image files>; classes sorted by name. A split
/// directory holding images directly (no class folders) yields unlabeled samples.
class ImageFolder final : public Dataset {
 public:
  ImageFolder(const std::filesystem::path& root, Split split, int expected_classes = 0);

  std::int64_t size() const override { return static_cast<std::int64_t>(files_.size()); }
  int class_count() const override { return class_count_; }
  std::int64_t label(std::int64_t index) const override;
  cv::Mat image(std::int64_t index) const override;
  const std::vector<std::string>& class_names() const { return class_names_; }

 private:
  std::vector<std::filesystem::path> files_;
  std::vector<std::int64_t> labels_;
  std::vector<std::string> class_names_;
  int class_count_ = 0;
};

/// A view restricted to an index list.
class SubsetDataset final : public Dataset {
 public:
  SubsetDataset(std::shared_ptr<const Dataset> base, std::vector<std::int64_t> indices);

  std::int64_t size() const override { return static_cast<std::int64_t>(indices_.size()); }
  int class_count() const override { return base_->class_count(); }
  std::int64_t label(std::int64_t index) const override;
  cv::Mat image(std::int64_t index) const override;
  const std::vector<std::int64_t>& indices() const { return indices_; }

 private:
  std::shared_ptr<const Dataset> base_;
  std::vector<std::int64_t> indices_;
};

/// Drops labels from another dataset.
class UnlabeledView final : public Dataset {
 public:
  explicit UnlabeledView(std::shared_ptr<const Dataset> base) : base_(std::move(base)) {}
  std::int64_t size() const override { return base_->size(); }
  int class_count() const override { return base_->class_count(); }
  std::int64_t label(std::int64_t) const override { return -1; }
  cv::Mat image(std::int64_t index) const override { return base_->image(index); }

 private:
  std::shared_ptr<const Dataset> base_;
};

/// Opens the split named by the reference. Throws DataError if it is absent.
std::shared_ptr<const Dataset> open_dataset(const DatasetRef& ref);

/// Per-class sample counts equal round(fraction · count) and the selection is
/// a pure function of the seed. Throws SubsetError naming a class that would
/// receive no samples. Non-stratified specs draw round(fraction · N) overall.
std::vector<std::int64_t> stratified_subset(std::span<const std::int64_t> labels, int class_count,
                                            const SubsetSpec& spec);

/// Newline-delimited index lists.
void write_index_list(const std::filesystem::path& file, std::span<const std::int64_t> indices);
std::vector<std::int64_t> read_index_list(const std::filesystem::path& file);

/// Writes 32×32 RGB images in the CIFAR-100 record layout (coarse label 0).
void write_cifar100_binary(const std::filesystem::path& file, std::span<const cv::Mat> images,
                           std::span<const std::int64_t> labels);

}  // namespace kd
