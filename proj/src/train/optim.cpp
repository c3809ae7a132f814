// SPDX-License-Identifier: Apache-2.0
#include "kdkit/train/optim.hpp"

#include <cmath>

#include "kdkit/errors.hpp"

namespace kd::train {

std::vector<ParamGroup> decay_groups(const std::vector<torch::Tensor>& params) {
  ParamGroup decayed, plain;
  plain.decay = false;
  for (const auto& p : params) {
    if (!p.requires_grad()) continue;
    (p.dim() > 1 ? decayed : plain).params.push_back(p);
  }
  return {decayed, plain};
}

Optimizer::Optimizer(OptimizerKind kind, const OptimizerParams& params, double weight_decay,
                     std::vector<ParamGroup> groups)
    : kind_(kind), params_(params), weight_decay_(weight_decay) {
  if (weight_decay < 0) fail(ErrorKind::Config, "weight_decay must be >= 0");
  for (auto& g : groups) {
    for (auto& p : g.params) {
      slots_.push_back({p, g.decay, torch::zeros_like(p, torch::MemoryFormat::Preserve),
                        kind == OptimizerKind::SGD ? torch::Tensor() : torch::zeros_like(p)});
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& s : slots_) {
    if (s.param.grad().defined()) s.param.mutable_grad() = torch::Tensor();
  }
}

void Optimizer::step(double lr) {
  torch::NoGradGuard no_grad;
  ++step_count_;
  for (auto& s : slots_) {
    if (!s.param.grad().defined()) continue;
    switch (kind_) {
      case OptimizerKind::SGD: sgd(s, lr); break;
      case OptimizerKind::ADAMW: adamw(s, lr); break;
      case OptimizerKind::LAMB: lamb(s, lr); break;
    }
  }
}

void Optimizer::sgd(Slot& s, double lr) {
  auto d = s.param.grad();
  if (s.decay && weight_decay_ > 0) d = d + weight_decay_ * s.param;
  if (params_.momentum > 0) {
    // The buffer starts at zero, so the first step stores d itself.
    s.m.mul_(params_.momentum).add_(d);
    d = params_.nesterov ? d + params_.momentum * s.m : s.m;
  }
  s.param.add_(d, -lr);
}

void Optimizer::adamw(Slot& s, double lr) {
  const auto& g = s.param.grad();
  if (s.decay && weight_decay_ > 0) s.param.mul_(1.0 - lr * weight_decay_);
  s.m.mul_(params_.beta1).add_(g, 1.0 - params_.beta1);
  s.v.mul_(params_.beta2).addcmul_(g, g, 1.0 - params_.beta2);
  const double c1 = 1.0 - std::pow(params_.beta1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(params_.beta2, static_cast<double>(step_count_));
  const auto denom = (s.v / c2).sqrt_().add_(params_.eps);
  s.param.addcdiv_(s.m, denom, -lr / c1);
}

void Optimizer::lamb(Slot& s, double lr) {
  const auto& g = s.param.grad();
  s.m.mul_(params_.beta1).add_(g, 1.0 - params_.beta1);
  s.v.mul_(params_.beta2).addcmul_(g, g, 1.0 - params_.beta2);
  const double c1 = 1.0 - std::pow(params_.beta1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(params_.beta2, static_cast<double>(step_count_));
  auto update = (s.m / c1) / (s.v / c2).sqrt_().add_(params_.eps);
  const double wd = s.decay ? weight_decay_ : 0.0;
  double trust = 1.0;
  if (wd != 0.0) {
    update.add_(s.param, wd);
    const double w_norm = s.param.norm().item<double>();
    const double u_norm = update.norm().item<double>();
    if (w_norm > 0 && u_norm > 0) trust = w_norm / u_norm;
  }
  s.param.add_(update, -lr * trust);
}

void Optimizer::save(torch::serialize::OutputArchive& archive) const {
  archive.write("step_count", torch::tensor(step_count_));
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    archive.write("m/" + std::to_string(i), slots_[i].m);
    if (slots_[i].v.defined()) archive.write("v/" + std::to_string(i), slots_[i].v);
  }
}

void Optimizer::load(torch::serialize::InputArchive& archive) {
  torch::NoGradGuard no_grad;
  torch::Tensor count;
  archive.read("step_count", count);
  step_count_ = count.item<std::int64_t>();
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    torch::Tensor t;
    archive.read("m/" + std::to_string(i), t);
    if (!t.sizes().equals(slots_[i].m.sizes())) fail(ErrorKind::Config, "optimizer state does not match the model");
    slots_[i].m.copy_(t);
    if (slots_[i].v.defined()) {
      archive.read("v/" + std::to_string(i), t);
      slots_[i].v.copy_(t);
    }
  }
}

Optimizer make_optimizer(const TrainingRecipe& recipe, const std::vector<torch::Tensor>& params) {
  return Optimizer(recipe.optimizer, recipe.optimizer_params, recipe.weight_decay, decay_groups(params));
}

}  // namespace kd::train
