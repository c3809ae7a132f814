// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <torch/script.h>
#include <torch/torch.h>

namespace kd::train {

/// Named intermediate activations in forward order.
using Taps = std::vector<std::pair<std::string, torch::Tensor>>;

struct ModelOutput {
  torch::Tensor logits;
  Taps taps;

  const torch::Tensor& tap(const std::string& name) const;
};

/// Image classifier exposing activation taps "stem", "stage1".."stageN" and
/// "pool" alongside its logits.
class Classifier : public torch::nn::Module {
 public:
  virtual ModelOutput forward_taps(const torch::Tensor& x) = 0;
  virtual std::vector<std::string> tap_names() const = 0;
  torch::Tensor forward(const torch::Tensor& x) { return forward_taps(x).logits; }

  void save_to(const std::string& file);
  void load_from(const std::string& file);
};

using ClassifierPtr = std::shared_ptr<Classifier>;

/// Stochastic depth on a residual branch: zeroes whole samples with
/// probability p during training and rescales the survivors.
torch::Tensor drop_path(const torch::Tensor& x, double p, bool training);

/// Architectures: resnet{8,14,20,32,44,56,110} and resnet8x4 / resnet32x4
/// (CIFAR-style), resnet{18,34,50,101,152} and mobilenetv2 (ImageNet-style),
/// and "torchscript:<file>" for externally trained models. Throws ConfigError
/// for unknown names.
ClassifierPtr make_model(const std::string& arch, int num_classes, double drop_path_rate = 0.0);
std::vector<std::string> model_names();

std::int64_t parameter_count(torch::nn::Module& m);

}  // namespace kd::train
