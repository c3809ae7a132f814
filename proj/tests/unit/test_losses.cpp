// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "kdkit/errors.hpp"
#include "kdkit/losses.hpp"
#include "oracles.hpp"

using kd::HardTargets;
using kd::Matrix;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

kd::ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const kd::Error& e) {
    return e.kind();
  }
  FAIL("expected kd::Error");
  return kd::ErrorKind::NotFound;
}

}  // namespace

TEST_CASE("softmax_temperature closed forms") {
  Matrix p = kd::softmax_temperature(row({0, 0, 0}), 1.0);
  for (int j = 0; j < 3; ++j) CHECK(p(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  p = kd::softmax_temperature(row({std::log(2.0), 0}), 1.0);
  CHECK(p(0, 0) == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(p(0, 1) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  p = kd::softmax_temperature(row({5, -3, 1, 9}), 1e6);
  for (int j = 0; j < 4; ++j) CHECK(std::abs(p(0, j) - 0.25) < 1e-4);
  CHECK(kind_of([] { kd::softmax_temperature(row({NAN, 0}), 1.0); }) == kd::ErrorKind::Numeric);
}

TEST_CASE("ce_loss examples and oracle") {
  HardTargets t0(std::vector<std::int64_t>{0});
  CHECK(kd::ce_loss(row({0, 0}), t0, 0.0) == doctest::Approx(std::log(2.0)));
  CHECK(kd::ce_loss(row({0, 0}), t0, 0.1) == doctest::Approx(std::log(2.0)));
  CHECK(kd::ce_loss(row({60, -60}), t0, 0.0) < 1e-12);
  CHECK(kind_of([&] { kd::ce_loss(row({0, 0}), HardTargets(std::vector<std::int64_t>{2}), 0.0); }) ==
        kd::ErrorKind::Target);

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix z = oracle::random_matrix(rng, 5, 7, 2.0);
    auto labels = oracle::random_labels(rng, 5, 7);
    HardTargets t(labels);
    oracle::Rows q = oracle::rows_of(t.dense(7));
    CHECK(kd::ce_loss(z, t, 0.1) == doctest::Approx(oracle::ce(oracle::rows_of(z), q, 0.1)).epsilon(1e-10));
  }
}

TEST_CASE("bce_loss examples and oracle") {
  Matrix z = Matrix::Zero(3, 4);
  HardTargets half(Matrix::Constant(3, 4, 0.5));
  CHECK(kd::bce_loss(z, half) == doctest::Approx(std::log(2.0)));
  CHECK(kd::bce_loss(row({10, -10}), HardTargets(std::vector<std::int64_t>{0})) ==
        doctest::Approx(-std::log(1.0 / (1.0 + std::exp(-10.0)))).epsilon(1e-9));
  CHECK(kd::bce_loss(row({10, -10}), HardTargets(std::vector<std::int64_t>{0})) ==
        doctest::Approx(4.54e-5).epsilon(1e-3));

  // Calibrated targets reach the per-entry binary entropy.
  Matrix zc = row({0.3, -1.2, 2.0});
  Matrix tc(1, 3);
  double entropy = 0;
  for (int j = 0; j < 3; ++j) {
    const double s = 1.0 / (1.0 + std::exp(-zc(0, j)));
    tc(0, j) = s;
    entropy += -(s * std::log(s) + (1 - s) * std::log(1 - s));
  }
  CHECK(kd::bce_loss(zc, HardTargets(tc)) == doctest::Approx(entropy / 3).epsilon(1e-10));

  std::mt19937_64 rng(5);
  Matrix zr = oracle::random_matrix(rng, 4, 6, 3.0);
  HardTargets tr(oracle::random_labels(rng, 4, 6));
  CHECK(kd::bce_loss(zr, tr) ==
        doctest::Approx(oracle::bce(oracle::rows_of(zr), oracle::rows_of(tr.dense(6)))).epsilon(1e-10));
}

TEST_CASE("kl_soft_loss matches direct summation") {
  Matrix zt = oracle::logits_for({{0.7, 0.2, 0.1}});
  Matrix zs = oracle::logits_for({{0.5, 0.3, 0.2}});
  const double expected = oracle::kl({0.7, 0.2, 0.1}, {0.5, 0.3, 0.2});
  CHECK(kd::kl_soft_loss(zs, zt, 1.0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(kd::kl_soft_loss(zs, zt, 1.0) == doctest::Approx(0.0851).epsilon(1e-3));
  CHECK(kd::kl_soft_loss(zt, zt, 4.0) < 1e-12);
  // Shifting student logits by a constant leaves the loss at zero.
  CHECK(kd::kl_soft_loss(Matrix(zt.array() + 3.5), zt, 2.0) < 1e-10);
  CHECK(kind_of([&] { kd::kl_soft_loss(zs, Matrix::Zero(1, 4), 1.0); }) == kd::ErrorKind::Shape);

  std::mt19937_64 rng(3);
  for (double tau : {0.5, 1.0, 4.0}) {
    Matrix a = oracle::random_matrix(rng, 6, 9, 2.0), b = oracle::random_matrix(rng, 6, 9, 2.0);
    CHECK(kd::kl_soft_loss(a, b, tau) ==
          doctest::Approx(oracle::kl_soft(oracle::rows_of(a), oracle::rows_of(b), tau)).epsilon(1e-10));
  }
}

TEST_CASE("bkl_loss matches brute-force binary KL") {
  Matrix zt = oracle::logits_for({{0.7, 0.2, 0.1}});
  Matrix zs = oracle::logits_for({{0.5, 0.3, 0.2}});
  const double expected = oracle::binary_kl_sum({0.7, 0.2, 0.1}, {0.5, 0.3, 0.2});
  CHECK(std::abs(kd::bkl_loss(zs, zt, 1.0) - expected) < 1e-8);
  CHECK(kd::bkl_loss(zs, zt, 1.0) == doctest::Approx(0.1447).epsilon(1e-3));
  CHECK(kd::bkl_loss(zt, zt, 1.0) < 1e-12);
}

TEST_CASE("vanilla KD composite") {
  kd::LogitLossSettings s;
  s.alpha = 0.5;
  s.label_loss = kd::LabelLoss::CE;
  Matrix zt = oracle::logits_for({{0.7, 0.2, 0.1}});
  Matrix zs = oracle::logits_for({{0.5, 0.3, 0.2}});
  // Uniform hard part: replace the student with a two-way check of the arithmetic.
  HardTargets t(std::vector<std::int64_t>{0});
  auto b = kd::vanilla_kd_loss(zs, zt, t, s);
  CHECK(b.total == doctest::Approx(0.5 * b.hard_component + 0.5 * b.soft_component).epsilon(1e-12));
  CHECK(b.hard_component == doctest::Approx(-std::log(0.5)));
  CHECK(0.5 * std::log(2.0) + 0.5 * 0.0851 == doctest::Approx(0.3891).epsilon(1e-3));

  s.alpha = 0.0;
  b = kd::vanilla_kd_loss(zs, zt, t, s);
  CHECK(b.total == b.soft_component);

  s.alpha = 0.3;
  s.label_loss = kd::LabelLoss::NONE;
  CHECK(kind_of([&] { kd::vanilla_kd_loss(zs, zt, t, s); }) == kd::ErrorKind::Config);

  s.alpha = 0.5;
  s.label_loss = kd::LabelLoss::CE;
  Matrix perfect = row({80, -80, -80});
  b = kd::vanilla_kd_loss(perfect, perfect, t, s);
  CHECK(b.total < 1e-12);
}

TEST_CASE("DKD worked instance and decomposition") {
  Matrix zt = oracle::logits_for({{0.6, 0.3, 0.1}});
  Matrix zs = oracle::logits_for({{0.5, 0.25, 0.25}});
  std::vector<std::int64_t> target{0};
  auto b = kd::dkd_loss(zs, zt, target, 1.0, 1.0, 1.0);
  auto parts = oracle::dkd_sample({0.6, 0.3, 0.1}, {0.5, 0.25, 0.25}, 0);
  CHECK(b.extra.at("tckd") == doctest::Approx(parts.tckd).epsilon(1e-10));
  CHECK(b.extra.at("nckd") == doctest::Approx(parts.nckd).epsilon(1e-10));
  CHECK(b.extra.at("tckd") == doctest::Approx(0.02014).epsilon(1e-3));
  CHECK(b.extra.at("nckd") == doctest::Approx(0.13081).epsilon(1e-3));
  const double kl = kd::kl_soft_loss(zs, zt, 1.0);
  CHECK(kl == doctest::Approx(parts.tckd + 0.4 * parts.nckd).epsilon(1e-10));
  CHECK(kl == doctest::Approx(0.07246).epsilon(1e-3));

  b = kd::dkd_loss(zs, zt, target, 1.0, 2.0, 1.0);
  CHECK(b.total == doctest::Approx(b.extra.at("tckd") + 2.0 * b.extra.at("nckd")).epsilon(1e-12));
  b = kd::dkd_loss(zt, zt, target, 1.0, 2.0, 3.0);
  CHECK(b.total < 1e-12);
  CHECK(kind_of([&] { kd::dkd_loss(row({1}), row({1}), target, 1, 2, 1); }) == kd::ErrorKind::Config);
}

TEST_CASE("DIST relations") {
  std::mt19937_64 rng(21);
  Matrix zs = oracle::random_matrix(rng, 6, 5), zt = oracle::random_matrix(rng, 6, 5);
  Matrix ps = kd::softmax_temperature(zs, 1.0), pt = kd::softmax_temperature(zt, 1.0);
  CHECK(kd::inter_class_relation(ps, pt) ==
        doctest::Approx(oracle::inter(oracle::rows_of(ps), oracle::rows_of(pt))).epsilon(1e-10));
  CHECK(kd::intra_class_relation(ps, pt) ==
        doctest::Approx(oracle::inter(oracle::transpose(oracle::rows_of(ps)),
                                      oracle::transpose(oracle::rows_of(pt))))
            .epsilon(1e-10));
  Matrix affine = 2.5 * pt.array() + 0.3;
  CHECK(kd::inter_class_relation(affine, pt) < 1e-12);

  HardTargets t(oracle::random_labels(rng, 6, 5));
  auto b = kd::dist_loss(zs, zt, t, 0.0, 0.0);
  CHECK(b.total == doctest::Approx(kd::ce_loss(zs, t, 0.0)).epsilon(1e-12));
  b = kd::dist_loss(zs, zt, t, 1.0, 2.0);
  CHECK(b.total ==
        doctest::Approx(b.hard_component + b.extra.at("inter") + 2.0 * b.extra.at("intra")).epsilon(1e-12));
  // A constant row has no variance and contributes 0 instead of NaN.
  Matrix flat = Matrix::Constant(2, 3, 1.0 / 3);
  Matrix other = kd::softmax_temperature(oracle::random_matrix(rng, 2, 3), 1.0);
  CHECK(std::isfinite(kd::inter_class_relation(flat, other)));
  CHECK(kind_of([&] { kd::dist_loss(zs.topRows(1), zt.topRows(1), HardTargets(std::vector<std::int64_t>{0}), 1, 1); }) ==
        kd::ErrorKind::Batch);
}

TEST_CASE("analytic gradients match finite differences") {
  std::mt19937_64 rng(99);
  const Eigen::Index n = 4, k = 6;
  for (int trial = 0; trial < 5; ++trial) {
    Matrix zs = oracle::random_matrix(rng, n, k, 1.5), zt = oracle::random_matrix(rng, n, k, 1.5);
    auto labels = oracle::random_labels(rng, n, k);
    HardTargets t(labels);
    Matrix soft = kd::softmax_temperature(oracle::random_matrix(rng, n, k), 1.0);
    HardTargets mixed(soft);
    const double tau = 1.0 + trial;
    auto check = [&](const char* name, const std::function<double(const Matrix&, Matrix*)>& f) {
      Matrix g;
      f(zs, &g);
      Matrix num = oracle::numeric_gradient([&](const Matrix& z) { return f(z, nullptr); }, zs);
      INFO(name << " trial " << trial);
      CHECK(oracle::relative_error(g, num) < 1e-4);
    };
    check("ce", [&](const Matrix& z, Matrix* g) { return kd::ce_loss(z, mixed, 0.1, g); });
    check("bce", [&](const Matrix& z, Matrix* g) { return kd::bce_loss(z, mixed, 0.1, g); });
    check("kl", [&](const Matrix& z, Matrix* g) { return kd::kl_soft_loss(z, zt, tau, g); });
    check("bkl", [&](const Matrix& z, Matrix* g) { return kd::bkl_loss(z, zt, tau, g); });
    check("dkd", [&](const Matrix& z, Matrix* g) { return kd::dkd_loss(z, zt, labels, 1.0, 2.0, tau, g).total; });
    check("dist", [&](const Matrix& z, Matrix* g) {
      return kd::dist_loss(z, zt, t, 1.0, 2.0, kd::LabelLoss::CE, 0.0, tau, g).total;
    });
    kd::LogitLossSettings s;
    s.alpha = 0.4;
    s.temperature = tau;
    check("kd", [&](const Matrix& z, Matrix* g) { return kd::vanilla_kd_loss(z, zt, t, s, g).total; });
  }
}

TEST_CASE("logits_objective reports hard + soft") {
  std::mt19937_64 rng(8);
  Matrix zs = oracle::random_matrix(rng, 5, 4), zt = oracle::random_matrix(rng, 5, 4);
  HardTargets t(oracle::random_labels(rng, 5, 4));
  for (kd::Method m : {kd::Method::KD, kd::Method::DKD, kd::Method::DIST}) {
    kd::LogitLossSettings s;
    s.method = m;
    auto b = kd::logits_objective(zs, zt, t, s);
    CHECK(b.total == doctest::Approx(b.hard_component + b.soft_component).epsilon(1e-12));
    auto soft_only = kd::logits_objective(zs, zt, t, s, false);
    CHECK(soft_only.hard_component == 0.0);
  }
  kd::LogitLossSettings s;
  s.method = kd::Method::CC;
  CHECK(kind_of([&] { kd::logits_objective(zs, zt, t, s); }) == kd::ErrorKind::Config);
}

TEST_CASE("HardTargets dominant class breaks ties low") {
  Matrix w(2, 3);
  w << 0.4, 0.4, 0.2, 0.1, 0.3, 0.6;
  auto d = HardTargets(w).dominant();
  CHECK(d[0] == 0);
  CHECK(d[1] == 2);
}
