// SPDX-License-Identifier: Apache-2.0
#include "doctest_torch.hpp"

#include <cmath>
#include <filesystem>

#include "kdkit/errors.hpp"
#include "kdkit/train/models.hpp"
#include "kdkit/train/objective.hpp"
#include "kdkit/train/optim.hpp"

using namespace kd;
using namespace kd::train;
namespace fs = std::filesystem;

TEST_CASE("cifar resnets expose logits and ordered taps") {
  torch::manual_seed(0);
  for (const char* arch : {"resnet8", "resnet20", "resnet8x4", "resnet32x4"}) {
    auto m = make_model(arch, 100);
    m->eval();
    const auto out = m->forward_taps(torch::randn({2, 3, 32, 32}));
    CHECK((out.logits.sizes() == torch::IntArrayRef({2, 100})));
    const std::vector<std::string> expected{"stem", "stage1", "stage2", "stage3", "pool"};
    CHECK(m->tap_names() == expected);
    REQUIRE(out.taps.size() == 5);
    for (std::size_t i = 0; i < out.taps.size(); ++i) CHECK(out.taps[i].first == m->tap_names()[i]);
    CHECK(out.tap("stage3").size(2) == 8);
    CHECK(out.tap("pool").dim() == 2);
  }
  CHECK(make_model("resnet8x4", 100)->forward_taps(torch::zeros({1, 3, 32, 32})).tap("pool").size(1) == 256);
}

TEST_CASE("parameter counts match the reference architectures") {
  // ImageNet counts are those of the standard torchvision definitions.
  CHECK(parameter_count(*make_model("resnet18", 1000)) == 11689512);
  CHECK(parameter_count(*make_model("resnet34", 1000)) == 21797672);
  CHECK(parameter_count(*make_model("resnet50", 1000)) == 25557032);
  CHECK(parameter_count(*make_model("mobilenetv2", 1000)) == 3504872);
  // CIFAR ResNet-20 / 56 with 100 classes: 16-32-64 basic blocks, n = 3 / 9.
  auto basic_count = [](int n, std::int64_t w0, std::int64_t w1, std::int64_t w2, std::int64_t w3) {
    auto conv_bn = [](std::int64_t i, std::int64_t o, std::int64_t k) { return i * o * k * k + 2 * o; };
    std::int64_t total = conv_bn(3, w0, 3);
    std::int64_t in = w0;
    for (std::int64_t w : {w1, w2, w3}) {
      for (int b = 0; b < n; ++b) {
        total += conv_bn(in, w, 3) + conv_bn(w, w, 3);
        if (in != w) total += conv_bn(in, w, 1);
        in = w;
      }
    }
    return total + in * 100 + 100;
  };
  CHECK(parameter_count(*make_model("resnet20", 100)) == basic_count(3, 16, 16, 32, 64));
  CHECK(parameter_count(*make_model("resnet56", 100)) == basic_count(9, 16, 16, 32, 64));
  CHECK(parameter_count(*make_model("resnet8x4", 100)) == basic_count(1, 32, 64, 128, 256));
}

TEST_CASE("imagenet models run at reduced resolution") {
  for (const char* arch : {"resnet18", "resnet50", "mobilenetv2"}) {
    auto m = make_model(arch, 10, 0.1);
    m->eval();
    const auto out = m->forward_taps(torch::randn({1, 3, 64, 64}));
    CHECK((out.logits.sizes() == torch::IntArrayRef({1, 10})));
    CHECK(out.taps.front().first == "stem");
    CHECK(out.taps.back().first == "pool");
  }
}

TEST_CASE("unknown architectures and missing taps are rejected") {
  CHECK_THROWS_AS(make_model("vit_gigantic", 10), Error);
  try {
    make_model("resnet8", 10)->forward_taps(torch::zeros({1, 3, 32, 32})).tap("stage9");
    FAIL("expected TapError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Tap);
  }
}

TEST_CASE("drop_path drops whole samples and preserves the mean") {
  torch::manual_seed(1);
  const auto x = torch::ones({4000, 2, 2, 2});
  CHECK(torch::equal(drop_path(x, 0.5, false), x));
  const auto y = drop_path(x, 0.5, true);
  const auto per_sample = y.flatten(1);
  CHECK(torch::equal(std::get<0>(per_sample.min(1)), std::get<0>(per_sample.max(1))));
  CHECK(torch::logical_or(per_sample.select(1, 0) == 0, per_sample.select(1, 0) == 2).all().item<bool>());
  CHECK(y.mean().item<double>() == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("weights round-trip through save_to / load_from") {
  const fs::path file = fs::temp_directory_path() / "kdkit_models_roundtrip.pt";
  torch::manual_seed(2);
  auto a = make_model("resnet8", 100);
  torch::manual_seed(3);
  auto b = make_model("resnet8", 100);
  a->save_to(file.string());
  b->load_from(file.string());
  a->eval();
  b->eval();
  const auto x = torch::randn({2, 3, 32, 32});
  CHECK(torch::equal(a->forward(x), b->forward(x)));
  fs::remove(file);
}

namespace {

// Plain-double reference implementations of the update rules.
struct RefState {
  std::vector<double> p, m, v;
  int t = 0;
};

void ref_sgd(RefState& s, const std::vector<double>& g, double lr, double wd, double mom, bool decay) {
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    const double d = g[i] + (decay ? wd * s.p[i] : 0.0);
    s.m[i] = mom * s.m[i] + d;
    s.p[i] -= lr * s.m[i];
  }
}

void ref_adamw(RefState& s, const std::vector<double>& g, double lr, double wd, double b1, double b2, double eps) {
  ++s.t;
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    s.p[i] *= 1 - lr * wd;
    s.m[i] = b1 * s.m[i] + (1 - b1) * g[i];
    s.v[i] = b2 * s.v[i] + (1 - b2) * g[i] * g[i];
    const double mh = s.m[i] / (1 - std::pow(b1, s.t)), vh = s.v[i] / (1 - std::pow(b2, s.t));
    s.p[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

void ref_lamb(RefState& s, const std::vector<double>& g, double lr, double wd, double b1, double b2, double eps) {
  ++s.t;
  std::vector<double> u(s.p.size());
  double pn = 0, un = 0;
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    s.m[i] = b1 * s.m[i] + (1 - b1) * g[i];
    s.v[i] = b2 * s.v[i] + (1 - b2) * g[i] * g[i];
    const double mh = s.m[i] / (1 - std::pow(b1, s.t)), vh = s.v[i] / (1 - std::pow(b2, s.t));
    u[i] = mh / (std::sqrt(vh) + eps) + wd * s.p[i];
    pn += s.p[i] * s.p[i];
    un += u[i] * u[i];
  }
  const double trust = (pn > 0 && un > 0) ? std::sqrt(pn) / std::sqrt(un) : 1.0;
  for (std::size_t i = 0; i < s.p.size(); ++i) s.p[i] -= lr * trust * u[i];
}

void check_close(const torch::Tensor& t, const std::vector<double>& ref) {
  const auto d = t.detach().to(torch::kDouble).flatten();
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(d[static_cast<std::int64_t>(i)].item<double>() == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

}  // namespace

TEST_CASE("optimizer updates follow the reference rules") {
  const std::vector<double> p0{1.0, -2.0, 0.5, 3.0};
  const std::vector<std::vector<double>> grads{{0.5, -1.0, 0.25, 2.0}, {-0.3, 0.4, 1.5, -0.2}, {0.1, 0.1, -0.1, 0.7}};
  OptimizerParams op;
  op.beta1 = 0.9;
  op.beta2 = 0.99;
  op.eps = 1e-8;
  op.momentum = 0.9;
  const double lr = 0.1, wd = 0.05;

  for (OptimizerKind kind : {OptimizerKind::SGD, OptimizerKind::ADAMW, OptimizerKind::LAMB}) {
    CAPTURE(to_string(kind));
    auto w = torch::tensor(p0, torch::kDouble).reshape({2, 2}).set_requires_grad(true);
    Optimizer opt(kind, op, wd, decay_groups({w}));
    RefState ref{p0, std::vector<double>(4, 0.0), std::vector<double>(4, 0.0)};
    for (const auto& g : grads) {
      w.mutable_grad() = torch::tensor(g, torch::kDouble).reshape({2, 2});
      opt.step(lr);
      if (kind == OptimizerKind::SGD) ref_sgd(ref, g, lr, wd, op.momentum, true);
      if (kind == OptimizerKind::ADAMW) ref_adamw(ref, g, lr, wd, op.beta1, op.beta2, op.eps);
      if (kind == OptimizerKind::LAMB) ref_lamb(ref, g, lr, wd, op.beta1, op.beta2, op.eps);
      check_close(w, ref.p);
    }
  }
}

TEST_CASE("1-d tensors are exempt from weight decay") {
  auto bias = torch::tensor({1.0, 2.0}, torch::kDouble).set_requires_grad(true);
  auto weight = torch::tensor({{1.0, 2.0}}, torch::kDouble).set_requires_grad(true);
  const auto groups = decay_groups({bias, weight});
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].decay);
  CHECK(groups[0].params.size() == 1);
  CHECK(groups[0].params[0].dim() == 2);
  CHECK_FALSE(groups[1].decay);

  OptimizerParams op;
  op.momentum = 0.0;
  Optimizer sgd(OptimizerKind::SGD, op, 0.5, groups);
  bias.mutable_grad() = torch::zeros_like(bias);
  weight.mutable_grad() = torch::zeros_like(weight);
  sgd.step(1.0);
  CHECK(torch::equal(bias, torch::tensor({1.0, 2.0}, torch::kDouble)));
  CHECK(weight[0][0].item<double>() == doctest::Approx(0.5));
}

TEST_CASE("optimizer state survives save and load") {
  auto make = [] { return torch::tensor({{0.3, -0.7}, {1.1, 0.2}}, torch::kDouble).set_requires_grad(true); };
  auto a = make(), b = make();
  OptimizerParams op;
  Optimizer oa(OptimizerKind::ADAMW, op, 0.01, decay_groups({a}));
  Optimizer ob(OptimizerKind::ADAMW, op, 0.01, decay_groups({b}));
  const auto g1 = torch::tensor({{0.5, -0.1}, {0.2, 0.9}}, torch::kDouble);
  const auto g2 = torch::tensor({{-0.4, 0.3}, {0.6, -0.2}}, torch::kDouble);
  a.mutable_grad() = g1.clone();
  oa.step(0.01);
  {
    torch::NoGradGuard ng;
    b.copy_(a);
  }
  torch::serialize::OutputArchive out;
  oa.save(out);
  std::ostringstream buf;
  out.save_to(buf);
  torch::serialize::InputArchive in;
  std::istringstream ibuf(buf.str());
  in.load_from(ibuf);
  ob.load(in);
  CHECK(ob.step_count() == 1);
  a.mutable_grad() = g2.clone();
  b.mutable_grad() = g2.clone();
  oa.step(0.01);
  ob.step(0.01);
  CHECK(torch::equal(a, b));
}

TEST_CASE("core_loss backpropagates the core library gradient") {
  torch::manual_seed(4);
  DistillJobSpec spec;
  spec.method = Method::KD;
  spec.temperature = 2.0;
  const auto settings = logit_loss_settings(spec);
  const auto s = torch::randn({4, 6}, torch::kFloat).set_requires_grad(true);
  const Matrix t = to_matrix(torch::randn({4, 6}));
  const HardTargets y(std::vector<std::int64_t>{0, 3, 5, 1});
  Matrix expected_grad;
  const double expected = logits_objective(to_matrix(s), t, y, settings, true, &expected_grad).total;
  const auto loss = core_loss(s, [&](const torch::Tensor& in, torch::Tensor& grad) {
    Matrix g;
    const double v = logits_objective(to_matrix(in), t, y, settings, true, &g).total;
    grad.copy_(from_matrix(g));
    return v;
  });
  CHECK((loss.scalar_type() == torch::kDouble));
  CHECK(loss.item<double>() == doctest::Approx(expected).epsilon(1e-12));
  (3.0 * loss).backward();
  const Matrix got = to_matrix(s.grad());
  CHECK((got - 3.0 * expected_grad).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("feature maps convert between tensors and the core layout") {
  const auto t = torch::arange(24, torch::kDouble).reshape({2, 3, 2, 2});
  const FeatureMap f = to_feature_map(t, "stage1");
  CHECK(f.layer_id == "stage1");
  CHECK(f.at(1, 2, 1, 0) == 22.0);
  CHECK(torch::equal(from_feature_map(f), t));
  const FeatureMap v = to_feature_map(torch::ones({3, 5}), "pool");
  CHECK((v.c == 5 && v.h == 1 && v.w == 1));
}
