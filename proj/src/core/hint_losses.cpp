// SPDX-License-Identifier: Apache-2.0
#include "kdkit/hint_losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kdkit/errors.hpp"

namespace kd {
namespace {

struct AxisTaps {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> frac;  // weight of `hi`
};

AxisTaps axis_taps(std::int64_t in, std::int64_t out) {
  AxisTaps t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = std::max((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0);
    auto lo = static_cast<std::int64_t>(std::floor(src));
    if (lo >= in - 1) {
      lo = in - 1;
      src = static_cast<double>(lo);
    }
    auto i = static_cast<std::size_t>(o);
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

void require_finite(const FeatureMap& f) {
  for (double v : f.values) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, "feature map '" + f.layer_id + "' is not finite");
  }
  if (static_cast<std::int64_t>(f.values.size()) != f.n * f.per_sample()) {
    fail(ErrorKind::Shape, "feature map '" + f.layer_id + "' has inconsistent storage");
  }
}

double huber(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }
double huber_grad(double x) { return std::abs(x) < 1.0 ? x : (x > 0 ? 1.0 : -1.0); }

Matrix pairwise_distances(const Matrix& e) {
  const Eigen::Index n = e.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (e.row(i) - e.row(j)).norm();
    }
  }
  return d;
}

struct NormalizedDistances {
  Matrix raw, normalized;
  double mean = 0.0;
  double positive = 0.0;
};

NormalizedDistances normalized_distances(const Matrix& e) {
  NormalizedDistances nd;
  nd.raw = pairwise_distances(e);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < nd.raw.size(); ++i) {
    if (nd.raw.data()[i] > 0) {
      sum += nd.raw.data()[i];
      nd.positive += 1.0;
    }
  }
  nd.mean = nd.positive > 0 ? sum / nd.positive : 0.0;
  nd.normalized = nd.mean > 0 ? Matrix(nd.raw / nd.mean) : Matrix::Zero(e.rows(), e.rows());
  return nd;
}

// Unit difference vectors u[a].row(b) = normalize(e_b - e_a), zero for coincident points.
std::vector<Matrix> unit_differences(const Matrix& e, std::vector<Vector>* norms) {
  const Eigen::Index n = e.rows();
  std::vector<Matrix> u(static_cast<std::size_t>(n));
  if (norms) norms->assign(static_cast<std::size_t>(n), Vector());
  for (Eigen::Index a = 0; a < n; ++a) {
    Matrix& ua = u[static_cast<std::size_t>(a)];
    ua = e.rowwise() - e.row(a);
    Vector len = ua.rowwise().norm();
    for (Eigen::Index b = 0; b < n; ++b) {
      if (len(b) > 1e-12) {
        ua.row(b) /= len(b);
      } else {
        ua.row(b).setZero();
      }
    }
    if (norms) (*norms)[static_cast<std::size_t>(a)] = std::move(len);
  }
  return u;
}

}  // namespace

FeatureMap::FeatureMap(std::string id, std::int64_t n_, std::int64_t c_, std::int64_t h_,
                       std::int64_t w_)
    : layer_id(std::move(id)), n(n_), c(c_), h(h_), w(w_),
      values(static_cast<std::size_t>(n_ * c_ * h_ * w_), 0.0) {}

FeatureMap FeatureMap::from_matrix(std::string id, const Matrix& rows) {
  FeatureMap f(std::move(id), rows.rows(), rows.cols());
  std::copy(rows.data(), rows.data() + rows.size(), f.values.begin());
  return f;
}

Matrix FeatureMap::flatten() const {
  Matrix m(n, per_sample());
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

Projector::Projector(ProjectorSpec spec) : spec_(spec) {
  if (spec.in_channels < 1 || spec.out_channels < 1) {
    fail(ErrorKind::Config, "projector channel counts must be >= 1");
  }
  weight_ = Matrix::Zero(spec.out_channels, spec.in_channels);
  bias_ = Vector::Zero(spec.out_channels);
  gamma_ = Vector::Ones(spec.out_channels);
  beta_ = Vector::Zero(spec.out_channels);
}

Projector Projector::identity(std::int64_t channels) {
  Projector p({channels, channels, ProjectorKind::CONV1x1, ProjectorNorm::NONE});
  p.weight_.setIdentity();
  return p;
}

FeatureMap Projector::forward(const FeatureMap& in) const {
  if (in.c != spec_.in_channels) {
    fail(ErrorKind::Shape, "projector expects " + std::to_string(spec_.in_channels) +
                               " channels, got " + std::to_string(in.c));
  }
  if (spec_.kind == ProjectorKind::LINEAR && in.spatial() != 1) {
    fail(ErrorKind::Shape, "LINEAR projector needs (N, C) features");
  }
  FeatureMap out(in.layer_id, in.n, spec_.out_channels, in.h, in.w);
  const std::int64_t hw = in.spatial();
  for (std::int64_t i = 0; i < in.n; ++i) {
    Eigen::Map<const Matrix> x(in.values.data() + i * in.c * hw, in.c, hw);
    Eigen::Map<Matrix> y(out.values.data() + i * out.c * hw, out.c, hw);
    y = weight_ * x;
    y.colwise() += bias_;
  }
  if (spec_.normalization == ProjectorNorm::BATCH_NORM) {
    const double m = static_cast<double>(in.n * hw);
    for (std::int64_t ch = 0; ch < out.c; ++ch) {
      double mean = 0.0, var = 0.0;
      for (std::int64_t i = 0; i < in.n; ++i)
        for (std::int64_t p = 0; p < hw; ++p) mean += out.values[(i * out.c + ch) * hw + p];
      mean /= m;
      for (std::int64_t i = 0; i < in.n; ++i)
        for (std::int64_t p = 0; p < hw; ++p) {
          double d = out.values[(i * out.c + ch) * hw + p] - mean;
          var += d * d;
        }
      var /= m;
      const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
      for (std::int64_t i = 0; i < in.n; ++i)
        for (std::int64_t p = 0; p < hw; ++p) {
          double& v = out.values[(i * out.c + ch) * hw + p];
          v = gamma_(ch) * (v - mean) * inv_std + beta_(ch);
        }
    }
  }
  return out;
}

FeatureMap Projector::backward(const FeatureMap& in, const FeatureMap& grad_out) const {
  const std::int64_t hw = in.spatial();
  FeatureMap g_pre = grad_out;
  if (spec_.normalization == ProjectorNorm::BATCH_NORM) {
    // Recompute pre-normalization activations.
    FeatureMap pre(in.layer_id, in.n, spec_.out_channels, in.h, in.w);
    for (std::int64_t i = 0; i < in.n; ++i) {
      Eigen::Map<const Matrix> x(in.values.data() + i * in.c * hw, in.c, hw);
      Eigen::Map<Matrix> y(pre.values.data() + i * pre.c * hw, pre.c, hw);
      y = weight_ * x;
      y.colwise() += bias_;
    }
    const double m = static_cast<double>(in.n * hw);
    for (std::int64_t ch = 0; ch < pre.c; ++ch) {
      auto idx = [&](std::int64_t i, std::int64_t p) { return (i * pre.c + ch) * hw + p; };
      double mean = 0.0, var = 0.0;
      for (std::int64_t i = 0; i < in.n; ++i)
        for (std::int64_t p = 0; p < hw; ++p) mean += pre.values[idx(i, p)];
      mean /= m;
      for (std::int64_t i = 0; i < in.n; ++i)
        for (std::int64_t p = 0; p < hw; ++p) var += std::pow(pre.values[idx(i, p)] - mean, 2);
      var /= m;
      const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::int64_t i = 0; i < in.n; ++i)
        for (std::int64_t p = 0; p < hw; ++p) {
          double xhat = (pre.values[idx(i, p)] - mean) * inv_std;
          double dxhat = grad_out.values[idx(i, p)] * gamma_(ch);
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
      for (std::int64_t i = 0; i < in.n; ++i)
        for (std::int64_t p = 0; p < hw; ++p) {
          double xhat = (pre.values[idx(i, p)] - mean) * inv_std;
          double dxhat = grad_out.values[idx(i, p)] * gamma_(ch);
          g_pre.values[idx(i, p)] = inv_std * (dxhat - sum_dxhat / m - xhat * sum_dxhat_xhat / m);
        }
    }
  }
  FeatureMap g_in(in.layer_id, in.n, in.c, in.h, in.w);
  for (std::int64_t i = 0; i < in.n; ++i) {
    Eigen::Map<const Matrix> gy(g_pre.values.data() + i * g_pre.c * hw, g_pre.c, hw);
    Eigen::Map<Matrix> gx(g_in.values.data() + i * in.c * hw, in.c, hw);
    gx = weight_.transpose() * gy;
  }
  return g_in;
}

FeatureMap resize_bilinear(const FeatureMap& in, std::int64_t out_h, std::int64_t out_w) {
  if (out_h == in.h && out_w == in.w) return in;
  const AxisTaps ty = axis_taps(in.h, out_h), tx = axis_taps(in.w, out_w);
  FeatureMap out(in.layer_id, in.n, in.c, out_h, out_w);
  for (std::int64_t i = 0; i < in.n; ++i)
    for (std::int64_t ch = 0; ch < in.c; ++ch)
      for (std::int64_t y = 0; y < out_h; ++y) {
        const auto yi = static_cast<std::size_t>(y);
        for (std::int64_t x = 0; x < out_w; ++x) {
          const auto xi = static_cast<std::size_t>(x);
          const double fy = ty.frac[yi], fx = tx.frac[xi];
          out.at(i, ch, y, x) = (1 - fy) * ((1 - fx) * in.at(i, ch, ty.lo[yi], tx.lo[xi]) +
                                            fx * in.at(i, ch, ty.lo[yi], tx.hi[xi])) +
                                fy * ((1 - fx) * in.at(i, ch, ty.hi[yi], tx.lo[xi]) +
                                      fx * in.at(i, ch, ty.hi[yi], tx.hi[xi]));
        }
      }
  return out;
}

FeatureMap resize_bilinear_adjoint(const FeatureMap& g, std::int64_t in_h, std::int64_t in_w) {
  if (g.h == in_h && g.w == in_w) return g;
  const AxisTaps ty = axis_taps(in_h, g.h), tx = axis_taps(in_w, g.w);
  FeatureMap out(g.layer_id, g.n, g.c, in_h, in_w);
  for (std::int64_t i = 0; i < g.n; ++i)
    for (std::int64_t ch = 0; ch < g.c; ++ch)
      for (std::int64_t y = 0; y < g.h; ++y) {
        const auto yi = static_cast<std::size_t>(y);
        for (std::int64_t x = 0; x < g.w; ++x) {
          const auto xi = static_cast<std::size_t>(x);
          const double v = g.at(i, ch, y, x), fy = ty.frac[yi], fx = tx.frac[xi];
          out.at(i, ch, ty.lo[yi], tx.lo[xi]) += (1 - fy) * (1 - fx) * v;
          out.at(i, ch, ty.lo[yi], tx.hi[xi]) += (1 - fy) * fx * v;
          out.at(i, ch, ty.hi[yi], tx.lo[xi]) += fy * (1 - fx) * v;
          out.at(i, ch, ty.hi[yi], tx.hi[xi]) += fy * fx * v;
        }
      }
  return out;
}

double hint_loss(const FeatureMap& f_s, const FeatureMap& f_t, const Projector& proj_s,
                 const Projector& proj_t, HintMetric metric, FeatureMap* grad_f_s) {
  require_finite(f_s);
  require_finite(f_t);
  if (f_s.n != f_t.n) fail(ErrorKind::Shape, "student and teacher batch sizes differ");
  FeatureMap ps = proj_s.forward(f_s);
  FeatureMap pt = proj_t.forward(f_t);
  if (ps.c != pt.c) {
    fail(ErrorKind::Shape, "projected channels differ: " + std::to_string(ps.c) + " vs " +
                               std::to_string(pt.c));
  }
  const std::int64_t h = std::min(ps.h, pt.h), w = std::min(ps.w, pt.w);
  FeatureMap rs = resize_bilinear(ps, h, w);
  FeatureMap rt = resize_bilinear(pt, h, w);
  const double count = static_cast<double>(rs.values.size());
  double loss = 0.0;
  FeatureMap g_rs;
  if (grad_f_s) g_rs = FeatureMap(rs.layer_id, rs.n, rs.c, rs.h, rs.w);
  for (std::size_t i = 0; i < rs.values.size(); ++i) {
    const double d = rs.values[i] - rt.values[i];
    if (metric == HintMetric::L1) {
      loss += std::abs(d);
      if (grad_f_s) g_rs.values[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / count;
    } else {
      loss += d * d;
      if (grad_f_s) g_rs.values[i] = 2.0 * d / count;
    }
  }
  if (grad_f_s) {
    FeatureMap g_ps = resize_bilinear_adjoint(g_rs, ps.h, ps.w);
    *grad_f_s = proj_s.backward(f_s, g_ps);
    grad_f_s->layer_id = f_s.layer_id;
  }
  return loss / count;
}

double cc_loss(const FeatureMap& f_s, const FeatureMap& f_t, FeatureMap* grad_f_s) {
  require_finite(f_s);
  require_finite(f_t);
  if (f_s.n < 2) fail(ErrorKind::Batch, "CC needs a batch of at least 2");
  if (f_s.n != f_t.n) fail(ErrorKind::Shape, "student and teacher batch sizes differ");
  const Eigen::Index n = f_s.n;
  auto normalize = [](const Matrix& m, Vector* norms) {
    Matrix out = m;
    Vector len = m.rowwise().norm();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (len(i) > 1e-12) {
        out.row(i) /= len(i);
      } else {
        out.row(i).setZero();
      }
    }
    if (norms) *norms = len;
    return out;
  };
  Vector s_norms;
  Matrix s_hat = normalize(f_s.flatten(), &s_norms);
  Matrix t_hat = normalize(f_t.flatten(), nullptr);
  Matrix gs = s_hat * s_hat.transpose();
  Matrix gt = t_hat * t_hat.transpose();
  Matrix diff = gs - gt;
  const double count = static_cast<double>(n * n);
  const double loss = diff.squaredNorm() / count;
  if (grad_f_s) {
    Matrix d_gram = 2.0 * diff / count;
    Matrix d_hat = (d_gram + d_gram.transpose()) * s_hat;
    Matrix d_raw = Matrix::Zero(n, s_hat.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      if (s_norms(i) <= 1e-12) continue;
      d_raw.row(i) = (d_hat.row(i) - s_hat.row(i) * s_hat.row(i).dot(d_hat.row(i))) / s_norms(i);
    }
    *grad_f_s = f_s;
    std::copy(d_raw.data(), d_raw.data() + d_raw.size(), grad_f_s->values.begin());
  }
  return loss;
}

RkdTerms rkd_loss(const FeatureMap& f_s, const FeatureMap& f_t, double distance_weight,
                  double angle_weight, FeatureMap* grad_f_s) {
  require_finite(f_s);
  require_finite(f_t);
  if (f_s.n < 3) fail(ErrorKind::Batch, "RKD's angle term needs a batch of at least 3");
  if (f_s.n != f_t.n) fail(ErrorKind::Shape, "student and teacher batch sizes differ");
  const Eigen::Index n = f_s.n;
  const Matrix es = f_s.flatten(), et = f_t.flatten();
  RkdTerms terms;

  // Distance-wise term.
  NormalizedDistances ds = normalized_distances(es);
  NormalizedDistances dt = normalized_distances(et);
  const double pairs = static_cast<double>(n * n);
  Matrix g_dn = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double x = ds.normalized(i, j) - dt.normalized(i, j);
      terms.distance += huber(x);
      g_dn(i, j) = huber_grad(x) / pairs;
    }
  terms.distance /= pairs;

  // Angle-wise term over ordered triples (anchor a; legs b, c).
  std::vector<Vector> s_len;
  std::vector<Matrix> us = unit_differences(es, grad_f_s ? &s_len : nullptr);
  std::vector<Matrix> ut = unit_differences(et, nullptr);
  const double triples = static_cast<double>(n * n * n);
  std::vector<Matrix> g_angle(grad_f_s ? static_cast<std::size_t>(n) : 0);
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto ai = static_cast<std::size_t>(a);
    Matrix as = us[ai] * us[ai].transpose();
    Matrix at = ut[ai] * ut[ai].transpose();
    Matrix diff = as - at;
    if (grad_f_s) g_angle[ai].resize(n, n);
    for (Eigen::Index k = 0; k < diff.size(); ++k) {
      terms.angle += huber(diff.data()[k]);
      if (grad_f_s) g_angle[ai].data()[k] = huber_grad(diff.data()[k]) / triples;
    }
  }
  terms.angle /= triples;
  terms.total = distance_weight * terms.distance + angle_weight * terms.angle;

  if (grad_f_s) {
    Matrix g = Matrix::Zero(n, es.cols());
    if (ds.mean > 0) {
      // d(dn_ij)/d(d_kl) = δ/μ - d_ij/μ² · [d_kl > 0]/P
      double coupled = 0.0;
      for (Eigen::Index k = 0; k < g_dn.size(); ++k) coupled += g_dn.data()[k] * ds.raw.data()[k];
      const double shared = coupled / (ds.mean * ds.mean * ds.positive);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
          const double d = ds.raw(i, j);
          if (d <= 0) continue;
          const double g_d = distance_weight * (g_dn(i, j) / ds.mean - shared);
          Eigen::RowVectorXd dir = (es.row(i) - es.row(j)) / d;
          g.row(i) += g_d * dir;
          g.row(j) -= g_d * dir;
        }
    }
    for (Eigen::Index a = 0; a < n; ++a) {
      const auto ai = static_cast<std::size_t>(a);
      const Matrix& ga = g_angle[ai];
      Matrix d_unit = angle_weight * (ga + ga.transpose()) * us[ai];
      for (Eigen::Index b = 0; b < n; ++b) {
        const double len = s_len[ai](b);
        if (len <= 1e-12) continue;
        Eigen::RowVectorXd u = us[ai].row(b);
        Eigen::RowVectorXd dv = (d_unit.row(b) - u * u.dot(d_unit.row(b))) / len;
        g.row(b) += dv;
        g.row(a) -= dv;
      }
    }
    *grad_f_s = f_s;
    std::copy(g.data(), g.data() + g.size(), grad_f_s->values.begin());
  }
  return terms;
}

}  // namespace kd
