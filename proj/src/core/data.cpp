// SPDX-License-Identifier: Apache-2.0
#include "kdkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "kdkit/errors.hpp"

namespace kd {
namespace fs = std::filesystem;

std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  words.reserve(parts.size() * 2);
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

std::vector<std::int64_t> Dataset::labels() const {
  std::vector<std::int64_t> out(static_cast<std::size_t>(size()));
  for (std::int64_t i = 0; i < size(); ++i) out[static_cast<std::size_t>(i)] = label(i);
  return out;
}

fs::path Cifar100Binary::split_file(const fs::path& root, Split split) {
  const char* name = split == Split::TRAIN ? "train.bin" : "test.bin";
  for (const fs::path& dir : {root, root / "cifar-100-binary"}) {
    if (fs::exists(dir / name)) return dir / name;
  }
  return root / name;
}

Cifar100Binary::Cifar100Binary(const fs::path& root, Split split) {
  const fs::path file = split_file(root, split);
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorKind::Data, "CIFAR-100 split file not found: " + file.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.empty() || raw.size() % kRecordBytes != 0) {
    fail(ErrorKind::Data, file.string() + " is not a CIFAR-100 binary file (size " +
                              std::to_string(raw.size()) + ")");
  }
  const std::size_t count = raw.size() / kRecordBytes;
  labels_.resize(count);
  pixels_.resize(count * 3072);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* rec = raw.data() + i * kRecordBytes;
    labels_[i] = rec[1];
    if (labels_[i] >= 100) fail(ErrorKind::Data, "fine label out of range in " + file.string());
    std::copy(rec + 2, rec + kRecordBytes, pixels_.begin() + static_cast<std::ptrdiff_t>(i * 3072));
  }
}

std::int64_t Cifar100Binary::label(std::int64_t index) const {
  return labels_.at(static_cast<std::size_t>(index));
}

cv::Mat Cifar100Binary::image(std::int64_t index) const {
  const std::uint8_t* planes = pixels_.data() + static_cast<std::size_t>(index) * 3072;
  cv::Mat img(32, 32, CV_8UC3);
  for (int y = 0; y < 32; ++y) {
    auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < 32; ++x) {
      for (int c = 0; c < 3; ++c) row[x][c] = planes[c * 1024 + y * 32 + x];
    }
  }
  return img;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".ppm" || ext == ".bmp";
}

fs::path split_dir(const fs::path& root, Split split) {
  switch (split) {
    case Split::TRAIN: return root / "train";
    case Split::VAL: return root / "val";
    case Split::TEST: return root / "test";
  }
  return root;
}

}  // namespace

ImageFolder::ImageFolder(const fs::path& root, Split split, int expected_classes) {
  const fs::path dir = split_dir(root, split);
  if (!fs::is_directory(dir)) fail(ErrorKind::Data, "image folder split not found: " + dir.string());
  std::vector<fs::path> class_dirs;
  std::vector<fs::path> loose;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
    else if (is_image_file(entry.path())) loose.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) {
    std::sort(loose.begin(), loose.end());
    files_ = std::move(loose);
    labels_.assign(files_.size(), -1);
    class_count_ = expected_classes;
    return;
  }
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    class_names_.push_back(class_dirs[c].filename().string());
    std::vector<fs::path> members;
    for (const auto& entry : fs::recursive_directory_iterator(class_dirs[c])) {
      if (entry.is_regular_file() && is_image_file(entry.path())) members.push_back(entry.path());
    }
    std::sort(members.begin(), members.end());
    for (auto& m : members) {
      files_.push_back(std::move(m));
      labels_.push_back(static_cast<std::int64_t>(c));
    }
  }
  class_count_ = static_cast<int>(class_dirs.size());
  if (expected_classes > 0 && class_count_ > expected_classes) {
    fail(ErrorKind::Data, dir.string() + " has " + std::to_string(class_count_) +
                              " classes, more than the configured " +
                              std::to_string(expected_classes));
  }
  class_count_ = std::max(class_count_, expected_classes);
}

std::int64_t ImageFolder::label(std::int64_t index) const {
  return labels_.at(static_cast<std::size_t>(index));
}

cv::Mat ImageFolder::image(std::int64_t index) const {
  const fs::path& file = files_.at(static_cast<std::size_t>(index));
  cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) fail(ErrorKind::Data, "cannot decode image " + file.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

SubsetDataset::SubsetDataset(std::shared_ptr<const Dataset> base, std::vector<std::int64_t> indices)
    : base_(std::move(base)), indices_(std::move(indices)) {
  for (std::int64_t i : indices_) {
    if (i < 0 || i >= base_->size()) fail(ErrorKind::Data, "subset index out of range");
  }
}

std::int64_t SubsetDataset::label(std::int64_t index) const {
  return base_->label(indices_.at(static_cast<std::size_t>(index)));
}

cv::Mat SubsetDataset::image(std::int64_t index) const {
  return base_->image(indices_.at(static_cast<std::size_t>(index)));
}

std::shared_ptr<const Dataset> open_dataset(const DatasetRef& ref) {
  if (ref.root.empty()) fail(ErrorKind::Data, "dataset '" + ref.name + "' has no root path");
  switch (ref.layout) {
    case DatasetLayout::CIFAR100_BINARY:
      return std::make_shared<Cifar100Binary>(ref.root, ref.split);
    case DatasetLayout::IMAGE_FOLDER:
      return std::make_shared<ImageFolder>(ref.root, ref.split, ref.class_count);
  }
  fail(ErrorKind::Data, "unsupported dataset layout");
}

std::vector<std::int64_t> stratified_subset(std::span<const std::int64_t> labels, int class_count,
                                            const SubsetSpec& spec) {
  if (!(spec.fraction > 0 && spec.fraction <= 1)) {
    fail(ErrorKind::Subset, "fraction must be in (0,1], got " + std::to_string(spec.fraction));
  }
  std::vector<std::int64_t> out;
  if (spec.fraction == 1.0) {
    out.resize(labels.size());
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  if (!spec.stratified) {
    std::vector<std::int64_t> all(labels.size());
    std::iota(all.begin(), all.end(), 0);
    auto rng = make_rng({spec.seed, 0x5eedULL});
    std::shuffle(all.begin(), all.end(), rng);
    auto keep = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(all.size())));
    if (keep == 0) fail(ErrorKind::Subset, "fraction selects no samples");
    out.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep));
    std::sort(out.begin(), out.end());
    return out;
  }
  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(std::max(class_count, 0)));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int64_t c = labels[i];
    if (c < 0 || c >= class_count) fail(ErrorKind::Subset, "label " + std::to_string(c) + " out of range");
    by_class[static_cast<std::size_t>(c)].push_back(static_cast<std::int64_t>(i));
  }
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    auto keep = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(members.size())));
    if (keep < 1) {
      fail(ErrorKind::Subset, "fraction " + std::to_string(spec.fraction) + " leaves class " +
                                  std::to_string(c) + " (" + std::to_string(members.size()) +
                                  " samples) empty");
    }
    auto rng = make_rng({spec.seed, static_cast<std::uint64_t>(c)});
    std::shuffle(members.begin(), members.end(), rng);
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_index_list(const fs::path& file, std::span<const std::int64_t> indices) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Data, "cannot write " + file.string());
  for (std::int64_t i : indices) out << i << '\n';
}

std::vector<std::int64_t> read_index_list(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorKind::Data, "cannot read " + file.string());
  std::vector<std::int64_t> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoll(line, &used));
      if (used != line.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      fail(ErrorKind::Parse, file.string() + ":" + std::to_string(line_no) + ": not an integer");
    }
  }
  return out;
}

void write_cifar100_binary(const fs::path& file, std::span<const cv::Mat> images,
                           std::span<const std::int64_t> labels) {
  if (images.size() != labels.size()) fail(ErrorKind::Data, "image/label count mismatch");
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Data, "cannot write " + file.string());
  std::vector<char> rec(static_cast<std::size_t>(Cifar100Binary::kRecordBytes));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const cv::Mat& img = images[i];
    if (img.rows != 32 || img.cols != 32 || img.type() != CV_8UC3) {
      fail(ErrorKind::Data, "CIFAR records need 32x32 8-bit RGB images");
    }
    if (labels[i] < 0 || labels[i] >= 100) fail(ErrorKind::Data, "CIFAR-100 label out of range");
    rec[0] = 0;
    rec[1] = static_cast<char>(labels[i]);
    for (int y = 0; y < 32; ++y) {
      const auto* row = img.ptr<cv::Vec3b>(y);
      for (int x = 0; x < 32; ++x) {
        for (int c = 0; c < 3; ++c) rec[2 + static_cast<std::size_t>(c * 1024 + y * 32 + x)] = static_cast<char>(row[x][c]);
      }
    }
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
}

}  // namespace kd
