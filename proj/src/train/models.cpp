// SPDX-License-Identifier: Apache-2.0
#include "kdkit/train/models.hpp"

#include <array>
#include <map>

#include "kdkit/errors.hpp"

namespace kd::train {

namespace nn = torch::nn;

const torch::Tensor& ModelOutput::tap(const std::string& name) const {
  for (const auto& [id, t] : taps) {
    if (id == name) return t;
  }
  fail(ErrorKind::Tap, "no activation tap named '" + name + "'");
}

void Classifier::save_to(const std::string& file) {
  torch::serialize::OutputArchive archive;
  save(archive);
  archive.save_to(file);
}

void Classifier::load_from(const std::string& file) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(file);
    load(archive);
  } catch (const c10::Error& e) {
    fail(ErrorKind::Config, "cannot load weights from " + file + ": " + e.what_without_backtrace());
  }
}

torch::Tensor drop_path(const torch::Tensor& x, double p, bool training) {
  if (!training || p <= 0.0) return x;
  const double keep = 1.0 - p;
  std::vector<std::int64_t> shape(static_cast<std::size_t>(x.dim()), 1);
  shape[0] = x.size(0);
  auto mask = torch::empty(shape, x.options()).bernoulli_(keep);
  return x * mask / keep;
}

std::int64_t parameter_count(nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

namespace {

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1,
                std::int64_t groups = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2).groups(groups).bias(false));
}

// Residual block with two 3x3 convolutions.
struct BasicBlockImpl : nn::Module {
  static constexpr std::int64_t kExpansion = 1;
  BasicBlockImpl(std::int64_t in, std::int64_t planes, std::int64_t stride, double dp)
      : conv1(conv(in, planes, 3, stride)), bn1(planes), conv2(conv(planes, planes, 3)), bn2(planes),
        drop(dp) {
    register_module("conv1", conv1);
    register_module("bn1", bn1);
    register_module("conv2", conv2);
    register_module("bn2", bn2);
    if (stride != 1 || in != planes) {
      down = nn::Sequential(conv(in, planes, 1, stride), nn::BatchNorm2d(planes));
      register_module("downsample", down);
    }
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1(conv1(x)));
    out = bn2(conv2(out));
    const auto identity = down.is_empty() ? x : down->forward(x);
    return torch::relu(identity + drop_path(out, drop, is_training()));
  }
  nn::Conv2d conv1;
  nn::BatchNorm2d bn1;
  nn::Conv2d conv2;
  nn::BatchNorm2d bn2;
  nn::Sequential down{nullptr};
  double drop;
};
TORCH_MODULE(BasicBlock);

struct BottleneckImpl : nn::Module {
  static constexpr std::int64_t kExpansion = 4;
  BottleneckImpl(std::int64_t in, std::int64_t planes, std::int64_t stride, double dp)
      : conv1(conv(in, planes, 1)), bn1(planes), conv2(conv(planes, planes, 3, stride)), bn2(planes),
        conv3(conv(planes, planes * kExpansion, 1)), bn3(planes * kExpansion), drop(dp) {
    register_module("conv1", conv1);
    register_module("bn1", bn1);
    register_module("conv2", conv2);
    register_module("bn2", bn2);
    register_module("conv3", conv3);
    register_module("bn3", bn3);
    if (stride != 1 || in != planes * kExpansion) {
      down = nn::Sequential(conv(in, planes * kExpansion, 1, stride), nn::BatchNorm2d(planes * kExpansion));
      register_module("downsample", down);
    }
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1(conv1(x)));
    out = torch::relu(bn2(conv2(out)));
    out = bn3(conv3(out));
    const auto identity = down.is_empty() ? x : down->forward(x);
    return torch::relu(identity + drop_path(out, drop, is_training()));
  }
  nn::Conv2d conv1;
  nn::BatchNorm2d bn1;
  nn::Conv2d conv2;
  nn::BatchNorm2d bn2;
  nn::Conv2d conv3;
  nn::BatchNorm2d bn3;
  nn::Sequential down{nullptr};
  double drop;
};
TORCH_MODULE(Bottleneck);

void init_resnet(nn::Module& m) {
  for (auto& sub : m.modules(/*include_self=*/false)) {
    if (auto* c = sub->as<nn::Conv2d>()) {
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
    } else if (auto* b = sub->as<nn::BatchNorm2d>()) {
      nn::init::ones_(b->weight);
      nn::init::zeros_(b->bias);
    }
  }
}

// Residual network with a list of stages. CIFAR variants use a 3x3 stem and
// no max pool; ImageNet variants use a 7x7 stride-2 stem plus max pool.
template <typename Block>
class ResNet final : public Classifier {
 public:
  ResNet(bool imagenet_stem, std::int64_t stem_width, const std::vector<std::int64_t>& widths,
         const std::vector<int>& blocks, int num_classes, double drop_path_rate)
      : imagenet_stem_(imagenet_stem) {
    stem_conv_ = register_module("conv1", imagenet_stem ? conv(3, stem_width, 7, 2) : conv(3, stem_width, 3));
    stem_bn_ = register_module("bn1", nn::BatchNorm2d(stem_width));
    int total = 0;
    for (int b : blocks) total += b;
    int index = 0;
    std::int64_t in = stem_width;
    for (std::size_t s = 0; s < widths.size(); ++s) {
      nn::Sequential stage;
      for (int b = 0; b < blocks[s]; ++b) {
        const std::int64_t stride = (b == 0 && s > 0) ? 2 : 1;
        const double dp = total > 1 ? drop_path_rate * index / (total - 1) : 0.0;
        stage->push_back(Block(in, widths[s], stride, dp));
        in = widths[s] * Block::ContainedType::kExpansion;
        ++index;
      }
      stages_.push_back(register_module("layer" + std::to_string(s + 1), stage));
    }
    fc_ = register_module("fc", nn::Linear(in, num_classes));
    init_resnet(*this);
  }

  ModelOutput forward_taps(const torch::Tensor& x) override {
    ModelOutput out;
    auto h = torch::relu(stem_bn_(stem_conv_(x)));
    if (imagenet_stem_) h = torch::max_pool2d(h, 3, 2, 1);
    out.taps.emplace_back("stem", h);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      h = stages_[s]->forward(h);
      out.taps.emplace_back("stage" + std::to_string(s + 1), h);
    }
    auto pooled = torch::adaptive_avg_pool2d(h, {1, 1}).flatten(1);
    out.taps.emplace_back("pool", pooled);
    out.logits = fc_(pooled);
    return out;
  }

  std::vector<std::string> tap_names() const override {
    std::vector<std::string> names{"stem"};
    for (std::size_t s = 0; s < stages_.size(); ++s) names.push_back("stage" + std::to_string(s + 1));
    names.push_back("pool");
    return names;
  }

 private:
  bool imagenet_stem_;
  nn::Conv2d stem_conv_{nullptr};
  nn::BatchNorm2d stem_bn_{nullptr};
  std::vector<nn::Sequential> stages_;
  nn::Linear fc_{nullptr};
};

struct InvertedResidualImpl : nn::Module {
  InvertedResidualImpl(std::int64_t in, std::int64_t out, std::int64_t stride, std::int64_t expand)
      : residual(stride == 1 && in == out) {
    const std::int64_t hidden = in * expand;
    if (expand != 1) {
      body->push_back(conv(in, hidden, 1));
      body->push_back(nn::BatchNorm2d(hidden));
      body->push_back(nn::Functional([](const torch::Tensor& t) { return torch::clamp(t, 0, 6); }));
    }
    body->push_back(conv(hidden, hidden, 3, stride, hidden));
    body->push_back(nn::BatchNorm2d(hidden));
    body->push_back(nn::Functional([](const torch::Tensor& t) { return torch::clamp(t, 0, 6); }));
    body->push_back(conv(hidden, out, 1));
    body->push_back(nn::BatchNorm2d(out));
    register_module("conv", body);
  }
  torch::Tensor forward(const torch::Tensor& x) { return residual ? x + body->forward(x) : body->forward(x); }
  nn::Sequential body;
  bool residual;
};
TORCH_MODULE(InvertedResidual);

class MobileNetV2 final : public Classifier {
 public:
  explicit MobileNetV2(int num_classes) {
    // (expansion, channels, repeats, stride)
    const std::vector<std::array<std::int64_t, 4>> config{
        {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2}, {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1}};
    stem_ = register_module("stem", nn::Sequential(conv(3, 32, 3, 2), nn::BatchNorm2d(32)));
    std::int64_t in = 32;
    for (std::size_t i = 0; i < config.size(); ++i) {
      const auto [t, c, n, s] = config[i];
      nn::Sequential stage;
      for (std::int64_t r = 0; r < n; ++r) {
        stage->push_back(InvertedResidual(in, c, r == 0 ? s : 1, t));
        in = c;
      }
      stages_.push_back(register_module("stage" + std::to_string(i + 1), stage));
    }
    head_ = register_module("head", nn::Sequential(conv(in, 1280, 1), nn::BatchNorm2d(1280)));
    fc_ = register_module("classifier", nn::Linear(1280, num_classes));
    init_resnet(*this);
  }

  ModelOutput forward_taps(const torch::Tensor& x) override {
    ModelOutput out;
    auto h = torch::clamp(stem_->forward(x), 0, 6);
    out.taps.emplace_back("stem", h);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      h = stages_[s]->forward(h);
      out.taps.emplace_back("stage" + std::to_string(s + 1), h);
    }
    h = torch::clamp(head_->forward(h), 0, 6);
    auto pooled = torch::adaptive_avg_pool2d(h, {1, 1}).flatten(1);
    out.taps.emplace_back("pool", pooled);
    out.logits = fc_(pooled);
    return out;
  }

  std::vector<std::string> tap_names() const override {
    std::vector<std::string> names{"stem"};
    for (std::size_t s = 0; s < stages_.size(); ++s) names.push_back("stage" + std::to_string(s + 1));
    names.push_back("pool");
    return names;
  }

 private:
  nn::Sequential stem_{nullptr}, head_{nullptr};
  std::vector<nn::Sequential> stages_;
  nn::Linear fc_{nullptr};
};

// A TorchScript module returning logits, or a tuple (logits, feature...) whose
// extra entries are exposed as taps feat1..featN.
class ScriptedClassifier final : public Classifier {
 public:
  explicit ScriptedClassifier(const std::string& file) {
    try {
      module_ = torch::jit::load(file);
    } catch (const c10::Error& e) {
      fail(ErrorKind::Config, "cannot load TorchScript model " + file + ": " + e.what_without_backtrace());
    }
  }

  ModelOutput forward_taps(const torch::Tensor& x) override {
    if (is_training()) module_.train(); else module_.eval();
    const auto result = module_.forward({x});
    ModelOutput out;
    if (result.isTensor()) {
      out.logits = result.toTensor();
    } else if (result.isTuple()) {
      const auto& items = result.toTupleRef().elements();
      if (items.empty()) fail(ErrorKind::Shape, "TorchScript model returned an empty tuple");
      out.logits = items[0].toTensor();
      for (std::size_t i = 1; i < items.size(); ++i) out.taps.emplace_back("feat" + std::to_string(i), items[i].toTensor());
    } else {
      fail(ErrorKind::Shape, "TorchScript model must return a tensor or tuple");
    }
    return out;
  }

  std::vector<std::string> tap_names() const override { return {}; }

  void freeze() {
    for (auto p : module_.parameters()) p.set_requires_grad(false);
  }

 private:
  torch::jit::Module module_;
};

struct CifarSpec {
  int depth;
  std::vector<std::int64_t> widths;  // stem, stage1..3
};

const std::map<std::string, CifarSpec>& cifar_specs() {
  static const std::map<std::string, CifarSpec> specs{
      {"resnet8", {8, {16, 16, 32, 64}}},      {"resnet14", {14, {16, 16, 32, 64}}},
      {"resnet20", {20, {16, 16, 32, 64}}},    {"resnet32", {32, {16, 16, 32, 64}}},
      {"resnet44", {44, {16, 16, 32, 64}}},    {"resnet56", {56, {16, 16, 32, 64}}},
      {"resnet110", {110, {16, 16, 32, 64}}},  {"resnet8x4", {8, {32, 64, 128, 256}}},
      {"resnet32x4", {32, {32, 64, 128, 256}}}};
  return specs;
}

const std::map<std::string, std::pair<bool, std::vector<int>>>& imagenet_specs() {
  // name -> (bottleneck, blocks per stage)
  static const std::map<std::string, std::pair<bool, std::vector<int>>> specs{
      {"resnet18", {false, {2, 2, 2, 2}}}, {"resnet34", {false, {3, 4, 6, 3}}},
      {"resnet50", {true, {3, 4, 6, 3}}},  {"resnet101", {true, {3, 4, 23, 3}}},
      {"resnet152", {true, {3, 8, 36, 3}}}};
  return specs;
}

}  // namespace

ClassifierPtr make_model(const std::string& arch, int num_classes, double drop_path_rate) {
  if (num_classes < 1) fail(ErrorKind::Config, "num_classes must be positive");
  const std::string scripted = "torchscript:";
  if (arch.rfind(scripted, 0) == 0) {
    auto m = std::make_shared<ScriptedClassifier>(arch.substr(scripted.size()));
    m->freeze();
    return m;
  }
  if (auto it = cifar_specs().find(arch); it != cifar_specs().end()) {
    const int n = (it->second.depth - 2) / 6;
    const auto& w = it->second.widths;
    return std::make_shared<ResNet<BasicBlock>>(false, w[0], std::vector<std::int64_t>(w.begin() + 1, w.end()),
                                                std::vector<int>(3, n), num_classes, drop_path_rate);
  }
  if (auto it = imagenet_specs().find(arch); it != imagenet_specs().end()) {
    const std::vector<std::int64_t> widths{64, 128, 256, 512};
    if (it->second.first) {
      return std::make_shared<ResNet<Bottleneck>>(true, 64, widths, it->second.second, num_classes, drop_path_rate);
    }
    return std::make_shared<ResNet<BasicBlock>>(true, 64, widths, it->second.second, num_classes, drop_path_rate);
  }
  if (arch == "mobilenetv2") return std::make_shared<MobileNetV2>(num_classes);
  fail(ErrorKind::Config, "unknown architecture '" + arch + "'");
}

std::vector<std::string> model_names() {
  std::vector<std::string> names;
  for (const auto& [k, _] : cifar_specs()) names.push_back(k);
  for (const auto& [k, _] : imagenet_specs()) names.push_back(k);
  names.push_back("mobilenetv2");
  names.push_back("torchscript:<file>");
  return names;
}

}  // namespace kd::train
