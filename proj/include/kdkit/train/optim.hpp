// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "kdkit/recipes.hpp"

namespace kd::train {

struct ParamGroup {
  std::vector<torch::Tensor> params;
  bool decay = true;
};

/// Splits parameters into a decayed group (matrices and kernels) and a
/// non-decayed group (1-d tensors: normalization scales/shifts and biases).
std::vector<ParamGroup> decay_groups(const std::vector<torch::Tensor>& params);

/// SGD with momentum (coupled L2), AdamW (decoupled decay) and LAMB (layer-wise
/// trust ratio ‖w‖/‖update‖ on decayed tensors). No gradient clipping.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, const OptimizerParams& params, double weight_decay,
            std::vector<ParamGroup> groups);

  void step(double lr);
  void zero_grad();
  std::int64_t step_count() const { return step_count_; }
  OptimizerKind kind() const { return kind_; }

  void save(torch::serialize::OutputArchive& archive) const;
  void load(torch::serialize::InputArchive& archive);

 private:
  struct Slot {
    torch::Tensor param;
    bool decay;
    torch::Tensor m, v;
  };

  void sgd(Slot& s, double lr);
  void adamw(Slot& s, double lr);
  void lamb(Slot& s, double lr);

  OptimizerKind kind_;
  OptimizerParams params_;
  double weight_decay_;
  std::vector<Slot> slots_;
  std::int64_t step_count_ = 0;
};

Optimizer make_optimizer(const TrainingRecipe& recipe, const std::vector<torch::Tensor>& params);

}  // namespace kd::train
