// SPDX-License-Identifier: Apache-2.0
#include "kdkit/train/objective.hpp"

#include <cstring>

#include "kdkit/errors.hpp"

namespace kd::train {

Matrix to_matrix(const torch::Tensor& t) {
  if (t.dim() != 2) fail(ErrorKind::Shape, "expected a 2-d tensor");
  const auto d = t.detach().to(torch::kCPU, torch::kDouble).contiguous();
  Matrix m(d.size(0), d.size(1));
  std::memcpy(m.data(), d.data_ptr<double>(), sizeof(double) * static_cast<std::size_t>(d.numel()));
  return m;
}

torch::Tensor from_matrix(const Matrix& m) {
  return torch::from_blob(const_cast<double*>(m.data()), {m.rows(), m.cols()}, torch::kDouble).clone();
}

FeatureMap to_feature_map(const torch::Tensor& t, std::string layer_id) {
  const auto d = t.detach().to(torch::kCPU, torch::kDouble).contiguous();
  FeatureMap f;
  f.layer_id = std::move(layer_id);
  if (d.dim() == 4) {
    f = FeatureMap(f.layer_id, d.size(0), d.size(1), d.size(2), d.size(3));
  } else if (d.dim() == 2) {
    f = FeatureMap(f.layer_id, d.size(0), d.size(1));
  } else {
    fail(ErrorKind::Shape, "feature taps must be NC or NCHW");
  }
  std::memcpy(f.values.data(), d.data_ptr<double>(), sizeof(double) * f.values.size());
  return f;
}

torch::Tensor from_feature_map(const FeatureMap& f) {
  return torch::from_blob(const_cast<double*>(f.values.data()), {f.n, f.c, f.h, f.w}, torch::kDouble).clone();
}

namespace {

class CoreLossFunction : public torch::autograd::Function<CoreLossFunction> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, torch::Tensor input,
                               const CoreLoss* fn) {
    const auto in = input.detach().to(torch::kCPU, torch::kDouble).contiguous();
    torch::Tensor grad = torch::zeros_like(in);
    const double value = (*fn)(in, grad);
    ctx->saved_data["grad"] = grad.to(input.device(), input.scalar_type());
    return torch::tensor(value, torch::TensorOptions().dtype(torch::kDouble).device(input.device()));
  }

  static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::variable_list grad_out) {
    const auto grad = ctx->saved_data["grad"].toTensor();
    return {grad * grad_out[0].to(grad.scalar_type()), torch::Tensor()};
  }
};

torch::nn::Sequential make_projector(const torch::Tensor& student, const torch::Tensor& teacher) {
  namespace nn = torch::nn;
  if (student.dim() != teacher.dim()) fail(ErrorKind::Shape, "hint pair mixes vector and spatial features");
  const std::int64_t in = student.size(1), out = teacher.size(1);
  if (student.dim() == 4) {
    return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 1).bias(false)), nn::BatchNorm2d(out));
  }
  return nn::Sequential(nn::Linear(nn::LinearOptions(in, out).bias(false)), nn::BatchNorm1d(out));
}

}  // namespace

torch::Tensor core_loss(const torch::Tensor& input, const CoreLoss& fn) {
  // The core losses run in double; keep autocast from touching the wrapper.
  return CoreLossFunction::apply(input, &fn);
}

DistillObjective::DistillObjective(const DistillJobSpec& spec, const ModelOutput& student_probe,
                                   const ModelOutput& teacher_probe)
    : spec_(spec), settings_(logit_loss_settings(spec)) {
  if (spec.method == Method::HINT) {
    for (std::size_t i = 0; i < spec.hint_layer_pairs.size(); ++i) {
      const auto& [s_id, t_id] = spec.hint_layer_pairs[i];
      auto proj = make_projector(student_probe.tap(s_id), teacher_probe.tap(t_id));
      register_module("proj" + std::to_string(i), proj);
      projectors_.push_back(std::move(proj));
    }
  } else if (feature_method()) {
    for (const auto& [s_id, t_id] : spec.hint_layer_pairs) {
      student_probe.tap(s_id);
      teacher_probe.tap(t_id);
    }
  }
}

bool DistillObjective::feature_method() const {
  return spec_.method == Method::HINT || spec_.method == Method::CC || spec_.method == Method::RKD;
}

StepLoss DistillObjective::operator()(const ModelOutput& student, const ModelOutput& teacher,
                                      const HardTargets& targets, bool hard_labels) {
  StepLoss out;
  if (!feature_method()) {
    const Matrix t_logits = to_matrix(teacher.logits);
    LossBreakdown parts;
    out.total = core_loss(student.logits, [&](const torch::Tensor& in, torch::Tensor& grad) {
      Matrix s_logits(in.size(0), in.size(1));
      std::memcpy(s_logits.data(), in.data_ptr<double>(), sizeof(double) * static_cast<std::size_t>(in.numel()));
      Matrix g;
      parts = logits_objective(s_logits, t_logits, targets, settings_, hard_labels, &g);
      grad.copy_(from_matrix(g));
      return parts.total;
    });
    out.parts = parts;
    return out;
  }

  torch::Tensor hard = torch::zeros({}, torch::kDouble);
  if (hard_labels && spec_.recipe.label_loss != LabelLoss::NONE) {
    hard = core_loss(student.logits, [&](const torch::Tensor& in, torch::Tensor& grad) {
      Matrix g;
      const double v = label_loss(to_matrix(in), targets, spec_.recipe.label_loss,
                                  spec_.recipe.label_smoothing, &g);
      grad.copy_(from_matrix(g));
      return v;
    });
  }
  torch::Tensor soft = torch::zeros({}, torch::kDouble);
  for (std::size_t i = 0; i < spec_.hint_layer_pairs.size(); ++i) {
    const auto& [s_id, t_id] = spec_.hint_layer_pairs[i];
    torch::Tensor fs = student.tap(s_id);
    const FeatureMap ft = to_feature_map(teacher.tap(t_id), t_id);
    if (spec_.method == Method::HINT) fs = projectors_[i]->forward(fs.to(torch::kFloat));
    const std::string id = s_id;
    const auto term = core_loss(fs, [&](const torch::Tensor& in, torch::Tensor& grad) {
      const FeatureMap f = to_feature_map(in, id);
      FeatureMap g;
      double v = 0.0;
      switch (spec_.method) {
        case Method::HINT:
          v = hint_loss(f, ft, Projector::identity(f.c), Projector::identity(ft.c), HintMetric::L2, &g);
          break;
        case Method::CC:
          v = cc_loss(f, ft, &g);
          break;
        default:
          v = rkd_loss(f, ft, spec_.rkd_distance_weight, spec_.rkd_angle_weight, &g).total;
          break;
      }
      grad.copy_(from_feature_map(g).reshape(grad.sizes()));
      return v;
    });
    soft = soft + term;
  }
  soft = spec_.hint_weight * soft;
  out.total = hard + soft;
  out.parts.hard_component = hard.item<double>();
  out.parts.soft_component = soft.item<double>();
  out.parts.total = out.parts.hard_component + out.parts.soft_component;
  return out;
}

}  // namespace kd::train
