// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "kdkit/errors.hpp"
#include "kdkit/hint_losses.hpp"
#include "oracles.hpp"

using kd::FeatureMap;
using kd::Matrix;
using kd::Projector;

namespace {

FeatureMap map_values(const FeatureMap& f, double (*fn)(double, double), double arg) {
  FeatureMap out = f;
  for (double& v : out.values) v = fn(v, arg);
  return out;
}

double add(double v, double a) { return v + a; }
double mul(double v, double a) { return v * a; }

// Gradient of a scalar function of FeatureMap values by central differences.
std::vector<double> numeric(const std::function<double(const FeatureMap&)>& f, const FeatureMap& x) {
  std::vector<double> g(x.values.size());
  FeatureMap p = x;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double s = p.values[i];
    p.values[i] = s + 1e-5;
    const double up = f(p);
    p.values[i] = s - 1e-5;
    const double down = f(p);
    p.values[i] = s;
    g[i] = (up - down) / 2e-5;
  }
  return g;
}

double rel(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

}  // namespace

TEST_CASE("hint_loss examples") {
  std::mt19937_64 rng(1);
  FeatureMap f = oracle::random_feature(rng, 3, 4, 5, 5);
  Projector id = Projector::identity(4);
  CHECK(kd::hint_loss(f, f, id, id, kd::HintMetric::L2) < 1e-15);
  CHECK(kd::hint_loss(f, map_values(f, add, 1.0), id, id, kd::HintMetric::L2) == doctest::Approx(1.0));
  CHECK(kd::hint_loss(f, map_values(f, add, 1.0), id, id, kd::HintMetric::L1) == doctest::Approx(1.0));

  FeatureMap g = oracle::random_feature(rng, 3, 4, 5, 5);
  double brute = 0;
  for (std::size_t i = 0; i < f.values.size(); ++i) brute += std::pow(f.values[i] - g.values[i], 2);
  CHECK(kd::hint_loss(f, g, id, id, kd::HintMetric::L2) ==
        doctest::Approx(brute / static_cast<double>(f.values.size())).epsilon(1e-12));

  Projector wrong = Projector::identity(3);
  CHECK_THROWS_AS(kd::hint_loss(f, g, wrong, id, kd::HintMetric::L2), kd::Error);
}

TEST_CASE("hint_loss downsamples the larger grid") {
  std::mt19937_64 rng(2);
  FeatureMap big = oracle::random_feature(rng, 2, 3, 8, 8);
  FeatureMap small = kd::resize_bilinear(big, 4, 4);
  Projector id = Projector::identity(3);
  CHECK(kd::hint_loss(big, small, id, id, kd::HintMetric::L2) < 1e-15);
  // A 2x downsample with half-pixel centers averages each 2x2 block.
  CHECK(small.at(0, 0, 0, 0) ==
        doctest::Approx((big.at(0, 0, 0, 0) + big.at(0, 0, 0, 1) + big.at(0, 0, 1, 0) + big.at(0, 0, 1, 1)) / 4));
}

TEST_CASE("resize adjoint satisfies <Ax, y> = <x, A'y>") {
  std::mt19937_64 rng(3);
  FeatureMap x = oracle::random_feature(rng, 2, 2, 7, 5);
  FeatureMap ax = kd::resize_bilinear(x, 3, 4);
  FeatureMap y = oracle::random_feature(rng, 2, 2, 3, 4);
  FeatureMap aty = kd::resize_bilinear_adjoint(y, 7, 5);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < ax.values.size(); ++i) lhs += ax.values[i] * y.values[i];
  for (std::size_t i = 0; i < x.values.size(); ++i) rhs += x.values[i] * aty.values[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("hint_loss gradient with a batch-normed projector") {
  std::mt19937_64 rng(4);
  FeatureMap fs = oracle::random_feature(rng, 3, 4, 6, 6);
  FeatureMap ft = oracle::random_feature(rng, 3, 5, 3, 3);
  Projector ps({4, 5, kd::ProjectorKind::CONV1x1, kd::ProjectorNorm::BATCH_NORM});
  ps.weight() = oracle::random_matrix(rng, 5, 4);
  ps.bias() = oracle::random_matrix(rng, 5, 1).col(0);
  ps.gamma() = (oracle::random_matrix(rng, 5, 1).array().abs() + 0.5).matrix().col(0);
  Projector pt = Projector::identity(5);
  for (auto metric : {kd::HintMetric::L2, kd::HintMetric::L1}) {
    FeatureMap g;
    kd::hint_loss(fs, ft, ps, pt, metric, &g);
    auto num = numeric([&](const FeatureMap& x) { return kd::hint_loss(x, ft, ps, pt, metric); }, fs);
    CHECK(rel(g.values, num) < 1e-4);
  }
}

TEST_CASE("cc_loss") {
  oracle::Rows a{{1, 0}, {1, 1}}, b{{0, 1}, {2, 1}};
  FeatureMap fa = FeatureMap::from_matrix("s", oracle::matrix_of(a));
  FeatureMap fb = FeatureMap::from_matrix("t", oracle::matrix_of(b));
  // Cosine Grams by hand: a -> off-diagonal 1/sqrt(2), b -> 1/sqrt(5); diagonals are 1.
  const double off = 1 / std::sqrt(2.0) - 1 / std::sqrt(5.0);
  const double hand = 2 * off * off / 4;
  CHECK(kd::cc_loss(fa, fb) == doctest::Approx(hand).epsilon(1e-12));
  CHECK(kd::cc_loss(fa, fb) == doctest::Approx(oracle::cc(a, b)).epsilon(1e-12));
  CHECK(kd::cc_loss(fa, fa) < 1e-15);
  CHECK(kd::cc_loss(map_values(fb, mul, 3.0), fb) < 1e-15);
  // Per-sample positive rescaling leaves the loss unchanged.
  FeatureMap scaled = fa;
  scaled.values[0] *= 4.0;
  scaled.values[1] *= 4.0;
  CHECK(kd::cc_loss(scaled, fb) == doctest::Approx(kd::cc_loss(fa, fb)).epsilon(1e-12));

  std::mt19937_64 rng(5);
  FeatureMap fs = oracle::random_feature(rng, 5, 6), ft = oracle::random_feature(rng, 5, 3);
  FeatureMap g;
  kd::cc_loss(fs, ft, &g);
  CHECK(rel(g.values, numeric([&](const FeatureMap& x) { return kd::cc_loss(x, ft); }, fs)) < 1e-4);
  CHECK_THROWS_AS(kd::cc_loss(oracle::random_feature(rng, 1, 3), oracle::random_feature(rng, 1, 3)), kd::Error);
}

TEST_CASE("rkd_loss") {
  oracle::Rows pts{{0, 0}, {1, 0}, {0, 2}};
  oracle::Rows other{{0, 0}, {2, 1}, {-1, 1}};
  FeatureMap a = FeatureMap::from_matrix("s", oracle::matrix_of(pts));
  FeatureMap b = FeatureMap::from_matrix("t", oracle::matrix_of(other));
  auto terms = kd::rkd_loss(a, b, 25, 50);
  auto [d, ang] = oracle::rkd(pts, other);
  CHECK(terms.distance == doctest::Approx(d).epsilon(1e-12));
  CHECK(terms.angle == doctest::Approx(ang).epsilon(1e-12));
  CHECK(terms.total == doctest::Approx(25 * d + 50 * ang).epsilon(1e-12));

  // Rotation plus uniform scaling of the teacher embedding.
  const double c = std::cos(0.7), s = std::sin(0.7);
  oracle::Rows rotated;
  for (auto& p : pts) rotated.push_back({3 * (c * p[0] - s * p[1]) + 5, 3 * (s * p[0] + c * p[1]) - 2});
  auto same = kd::rkd_loss(a, FeatureMap::from_matrix("t", oracle::matrix_of(rotated)));
  CHECK(same.total < 1e-12);

  std::mt19937_64 rng(6);
  FeatureMap fs = oracle::random_feature(rng, 5, 4), ft = oracle::random_feature(rng, 5, 4);
  FeatureMap g;
  kd::rkd_loss(fs, ft, 25, 50, &g);
  CHECK(rel(g.values, numeric([&](const FeatureMap& x) { return kd::rkd_loss(x, ft).total; }, fs)) < 1e-4);
  auto [d2, a2] = oracle::rkd(oracle::rows_of(fs.flatten()), oracle::rows_of(ft.flatten()));
  CHECK(kd::rkd_loss(fs, ft).distance == doctest::Approx(d2).epsilon(1e-10));
  CHECK(kd::rkd_loss(fs, ft).angle == doctest::Approx(a2).epsilon(1e-10));
  CHECK_THROWS_AS(kd::rkd_loss(oracle::random_feature(rng, 2, 3), oracle::random_feature(rng, 2, 3)), kd::Error);
}
