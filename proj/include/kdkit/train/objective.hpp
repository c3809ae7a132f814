// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "kdkit/hint_losses.hpp"
#include "kdkit/losses.hpp"
#include "kdkit/train/models.hpp"

namespace kd::train {

Matrix to_matrix(const torch::Tensor& t);
torch::Tensor from_matrix(const Matrix& m);
FeatureMap to_feature_map(const torch::Tensor& t, std::string layer_id);
torch::Tensor from_feature_map(const FeatureMap& f);

/// Loss evaluated by the core library on a double-precision copy of its
/// input. Returns the value and fills grad (same shape as the input).
using CoreLoss = std::function<double(const torch::Tensor& input, torch::Tensor& grad)>;

/// Differentiable scalar whose backward pass uses the gradient returned by fn.
/// The value is always computed in double precision, also under autocast.
torch::Tensor core_loss(const torch::Tensor& input, const CoreLoss& fn);

struct StepLoss {
  torch::Tensor total;
  LossBreakdown parts;
};

/// Assembles the method's objective from student and teacher outputs. Logit
/// methods use logits_objective; feature methods add hint_weight times the
/// summed feature term over hint_layer_pairs to the recipe's label loss. HINT
/// owns one learned projector per pair (1x1 conv or linear, then batch norm)
/// mapping student channels onto teacher channels.
class DistillObjective : public torch::nn::Module {
 public:
  DistillObjective(const DistillJobSpec& spec, const ModelOutput& student_probe,
                   const ModelOutput& teacher_probe);

  StepLoss operator()(const ModelOutput& student, const ModelOutput& teacher,
                      const HardTargets& targets, bool hard_labels = true);

  bool feature_method() const;

 private:
  DistillJobSpec spec_;
  LogitLossSettings settings_;
  std::vector<torch::nn::Sequential> projectors_;
};

}  // namespace kd::train
