// SPDX-License-Identifier: Apache-2.0
#include "kdkit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kdkit/errors.hpp"

namespace kd {
namespace {

void require_logits(const Matrix& logits, const char* what) {
  if (logits.rows() < 1 || logits.cols() < 2) {
    fail(ErrorKind::Shape, std::string(what) + " must be N×K with N >= 1 and K >= 2, got " +
                               std::to_string(logits.rows()) + "×" +
                               std::to_string(logits.cols()));
  }
  if (!logits.allFinite()) fail(ErrorKind::Numeric, std::string(what) + " contain non-finite values");
}

void require_same_shape(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorKind::Shape, "student " + std::to_string(a.rows()) + "×" + std::to_string(a.cols()) +
                               " vs teacher " + std::to_string(b.rows()) + "×" +
                               std::to_string(b.cols()));
  }
}

void require_tau(double tau) {
  if (!(tau > 0) || !std::isfinite(tau)) fail(ErrorKind::Config, "temperature must be > 0");
}

void require_batch(const HardTargets& targets, const Matrix& logits) {
  if (targets.size() != logits.rows()) {
    fail(ErrorKind::Shape, "target count " + std::to_string(targets.size()) + " != batch size " +
                               std::to_string(logits.rows()));
  }
}

double log_sum_exp(const double* v, Eigen::Index n, double scale) {
  double m = -INFINITY;
  for (Eigen::Index i = 0; i < n; ++i) m = std::max(m, v[i] * scale);
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) s += std::exp(v[i] * scale - m);
  return m + std::log(s);
}

// x·log(x/y) with the 0·log 0 = 0 convention, in log space.
double xlogx_over_y(double log_x, double log_y) {
  if (log_x == -INFINITY) return 0.0;
  return std::exp(log_x) * (log_x - log_y);
}

// Back-propagates g = dL/dp through p = softmax(z / tau), row by row.
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs, double tau) {
  Matrix out(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double dot = probs.row(i).dot(grad_probs.row(i));
    out.row(i) = (probs.row(i).array() * (grad_probs.row(i).array() - dot)).matrix() / tau;
  }
  return out;
}

struct Centered {
  Eigen::RowVectorXd values;
  double norm = 0.0;
};

Centered center(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  Centered c;
  c.values = v.array() - v.mean();
  c.norm = c.values.norm();
  return c;
}

constexpr double kZeroVariance = 1e-12;

// Mean of (1 - pearson) over rows; gradient w.r.t. rows of a.
double mean_pearson_distance(const Matrix& a, const Matrix& b, Matrix* grad_a) {
  const Eigen::Index rows = a.rows();
  if (grad_a) grad_a->setZero(a.rows(), a.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    Centered ca = center(a.row(i));
    Centered cb = center(b.row(i));
    if (ca.norm < kZeroVariance || cb.norm < kZeroVariance) continue;
    double rho = ca.values.dot(cb.values) / (ca.norm * cb.norm);
    total += 1.0 - rho;
    if (grad_a) {
      Eigen::RowVectorXd drho =
          cb.values / (ca.norm * cb.norm) - rho * ca.values / (ca.norm * ca.norm);
      grad_a->row(i) = -drho / static_cast<double>(rows);
    }
  }
  return total / static_cast<double>(rows);
}

}  // namespace

std::int64_t HardTargets::size() const {
  return is_index() ? static_cast<std::int64_t>(indices().size()) : weights().rows();
}

Matrix HardTargets::dense(std::int64_t num_classes) const {
  if (!is_index()) {
    if (weights().cols() != num_classes) {
      fail(ErrorKind::Target, "target weight rows have " + std::to_string(weights().cols()) +
                                  " classes, expected " + std::to_string(num_classes));
    }
    return weights();
  }
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(indices().size()), num_classes);
  for (std::size_t i = 0; i < indices().size(); ++i) {
    std::int64_t c = indices()[i];
    if (c < 0 || c >= num_classes) {
      fail(ErrorKind::Target, "class index " + std::to_string(c) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
    out(static_cast<Eigen::Index>(i), c) = 1.0;
  }
  return out;
}

std::vector<std::int64_t> HardTargets::dominant() const {
  if (is_index()) return indices();
  std::vector<std::int64_t> out(static_cast<std::size_t>(weights().rows()));
  for (Eigen::Index i = 0; i < weights().rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < weights().cols(); ++k) {
      if (weights()(i, k) > weights()(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

Matrix log_softmax_temperature(const Matrix& logits, double tau) {
  require_tau(tau);
  if (!logits.allFinite()) fail(ErrorKind::Numeric, "logits contain non-finite values");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double lse = log_sum_exp(logits.row(i).data(), logits.cols(), 1.0 / tau);
    out.row(i) = logits.row(i) / tau;
    out.row(i).array() -= lse;
  }
  return out;
}

Matrix softmax_temperature(const Matrix& logits, double tau) {
  return log_softmax_temperature(logits, tau).array().exp();
}

double ce_loss(const Matrix& logits, const HardTargets& targets, double smoothing, Matrix* grad) {
  require_logits(logits, "logits");
  require_batch(targets, logits);
  if (!(smoothing >= 0 && smoothing < 1)) fail(ErrorKind::Config, "label smoothing must be in [0,1)");
  const Eigen::Index n = logits.rows(), k = logits.cols();
  Matrix q = targets.dense(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    double sum = q.row(i).sum();
    if (std::abs(sum - 1.0) > 1e-6 || q.row(i).minCoeff() < 0) {
      fail(ErrorKind::Target, "CE target row " + std::to_string(i) + " is not a distribution");
    }
  }
  q = (1.0 - smoothing) * q.array() + smoothing / static_cast<double>(k);
  Matrix logp = log_softmax_temperature(logits, 1.0);
  double loss = -(q.cwiseProduct(logp)).sum() / static_cast<double>(n);
  if (grad) *grad = (logp.array().exp().matrix() - q) / static_cast<double>(n);
  return loss;
}

double bce_loss(const Matrix& logits, const HardTargets& targets, double smoothing, Matrix* grad) {
  require_logits(logits, "logits");
  require_batch(targets, logits);
  if (!(smoothing >= 0 && smoothing < 1)) fail(ErrorKind::Config, "label smoothing must be in [0,1)");
  const Eigen::Index n = logits.rows(), k = logits.cols();
  Matrix t = targets.dense(k);
  if (t.minCoeff() < 0 || t.maxCoeff() > 1) fail(ErrorKind::Target, "BCE targets must lie in [0,1]");
  t = (1.0 - smoothing) * t.array() + smoothing / static_cast<double>(k);
  const double count = static_cast<double>(n * k);
  double loss = 0.0;
  if (grad) grad->resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      double z = logits(i, j);
      // softplus(z) - z·t, stable for large |z|.
      loss += std::max(z, 0.0) - z * t(i, j) + std::log1p(std::exp(-std::abs(z)));
      if (grad) {
        double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        (*grad)(i, j) = (sig - t(i, j)) / count;
      }
    }
  }
  return loss / count;
}

double kl_soft_loss(const Matrix& student_logits, const Matrix& teacher_logits, double tau,
                    Matrix* grad) {
  require_logits(student_logits, "student logits");
  require_logits(teacher_logits, "teacher logits");
  require_same_shape(student_logits, teacher_logits);
  require_tau(tau);
  const Eigen::Index n = student_logits.rows();
  Matrix log_ps = log_softmax_temperature(student_logits, tau);
  Matrix log_pt = log_softmax_temperature(teacher_logits, tau);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < student_logits.cols(); ++j) {
      sum += xlogx_over_y(log_pt(i, j), log_ps(i, j));
    }
  }
  if (grad) {
    *grad = tau * (log_ps.array().exp() - log_pt.array().exp()).matrix() / static_cast<double>(n);
  }
  return tau * tau * std::max(sum, 0.0) / static_cast<double>(n);
}

double bkl_loss(const Matrix& student_logits, const Matrix& teacher_logits, double tau,
                Matrix* grad) {
  require_logits(student_logits, "student logits");
  require_logits(teacher_logits, "teacher logits");
  require_same_shape(student_logits, teacher_logits);
  const Eigen::Index n = student_logits.rows(), k = student_logits.cols();
  Matrix ps = softmax_temperature(student_logits, tau);
  Matrix pt = softmax_temperature(teacher_logits, tau);
  Matrix grad_ps = Matrix::Zero(n, k);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const double s_raw = ps(i, j);
      const double s = std::clamp(s_raw, kBklClamp, 1.0 - kBklClamp);
      const double t = std::clamp(pt(i, j), kBklClamp, 1.0 - kBklClamp);
      sum += t * std::log(t / s) + (1.0 - t) * std::log((1.0 - t) / (1.0 - s));
      if (s_raw > kBklClamp && s_raw < 1.0 - kBklClamp) {
        grad_ps(i, j) = (s - t) / (s * (1.0 - s)) / static_cast<double>(n);
      }
    }
  }
  if (grad) *grad = softmax_backward(ps, grad_ps, tau);
  return std::max(sum, 0.0) / static_cast<double>(n);
}

double label_loss(const Matrix& logits, const HardTargets& targets, LabelLoss kind,
                  double smoothing, Matrix* grad) {
  switch (kind) {
    case LabelLoss::CE: return ce_loss(logits, targets, smoothing, grad);
    case LabelLoss::BCE: return bce_loss(logits, targets, smoothing, grad);
    case LabelLoss::NONE:
      if (grad) grad->setZero(logits.rows(), logits.cols());
      return 0.0;
  }
  return 0.0;
}

LogitLossSettings logit_loss_settings(const DistillJobSpec& spec) {
  LogitLossSettings s;
  s.method = spec.method;
  s.alpha = spec.alpha;
  s.temperature = spec.temperature;
  s.soft_loss = spec.soft_loss;
  s.label_loss = spec.recipe.label_loss;
  s.label_smoothing = spec.recipe.label_smoothing;
  s.dkd_alpha = spec.dkd_alpha;
  s.dkd_beta = spec.dkd_beta;
  s.dist_beta = spec.dist_beta;
  s.dist_gamma = spec.dist_gamma;
  return s;
}

LossBreakdown vanilla_kd_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                              const HardTargets& targets, const LogitLossSettings& settings,
                              Matrix* grad) {
  if (settings.label_loss == LabelLoss::NONE && settings.alpha > 0) {
    fail(ErrorKind::Config, "alpha > 0 needs a hard-label loss, but label_loss is NONE");
  }
  if (!(settings.alpha >= 0 && settings.alpha <= 1)) fail(ErrorKind::Config, "alpha must be in [0,1]");
  LossBreakdown out;
  Matrix g_hard, g_soft;
  Matrix* gh = grad ? &g_hard : nullptr;
  Matrix* gs = grad ? &g_soft : nullptr;
  if (settings.alpha > 0) {
    out.hard_component =
        label_loss(student_logits, targets, settings.label_loss, settings.label_smoothing, gh);
  } else if (grad) {
    g_hard.setZero(student_logits.rows(), student_logits.cols());
  }
  out.soft_component = settings.soft_loss == SoftLoss::KL
                           ? kl_soft_loss(student_logits, teacher_logits, settings.temperature, gs)
                           : bkl_loss(student_logits, teacher_logits, settings.temperature, gs);
  out.total = settings.alpha * out.hard_component + (1.0 - settings.alpha) * out.soft_component;
  out.extra["alpha"] = settings.alpha;
  if (grad) *grad = settings.alpha * g_hard + (1.0 - settings.alpha) * g_soft;
  return out;
}

LossBreakdown dkd_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                       std::span<const std::int64_t> target_indices, double dkd_alpha,
                       double dkd_beta, double tau, Matrix* grad) {
  if (student_logits.cols() < 2) fail(ErrorKind::Config, "DKD needs at least two classes");
  require_logits(student_logits, "student logits");
  require_logits(teacher_logits, "teacher logits");
  require_same_shape(student_logits, teacher_logits);
  require_tau(tau);
  const Eigen::Index n = student_logits.rows(), k = student_logits.cols();
  if (static_cast<Eigen::Index>(target_indices.size()) != n) {
    fail(ErrorKind::Shape, "DKD needs one target index per sample");
  }
  const double inv_tau = 1.0 / tau;
  Matrix log_ps = log_softmax_temperature(student_logits, tau);
  Matrix log_pt = log_softmax_temperature(teacher_logits, tau);
  if (grad) grad->setZero(n, k);

  double tckd = 0.0, nckd = 0.0;
  std::vector<double> s_nt(static_cast<std::size_t>(k)), t_nt(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::int64_t c = target_indices[static_cast<std::size_t>(i)];
    if (c < 0 || c >= k) fail(ErrorKind::Target, "DKD target index out of range");
    // Non-target log-partition relative to the full one: log(1 - p_target).
    std::size_t m = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (j == c) continue;
      s_nt[m] = student_logits(i, j);
      t_nt[m] = teacher_logits(i, j);
      ++m;
    }
    const double lse_s_nt = log_sum_exp(s_nt.data(), static_cast<Eigen::Index>(m), inv_tau);
    const double lse_t_nt = log_sum_exp(t_nt.data(), static_cast<Eigen::Index>(m), inv_tau);
    const double lse_s = log_sum_exp(student_logits.row(i).data(), k, inv_tau);
    const double lse_t = log_sum_exp(teacher_logits.row(i).data(), k, inv_tau);
    const double log_bs = log_ps(i, c), log_bt = log_pt(i, c);
    const double log_bs_not = lse_s_nt - lse_s, log_bt_not = lse_t_nt - lse_t;
    tckd += xlogx_over_y(log_bt, log_bs) + xlogx_over_y(log_bt_not, log_bs_not);

    double row_nckd = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (j == c) continue;
      const double log_qs = student_logits(i, j) * inv_tau - lse_s_nt;
      const double log_qt = teacher_logits(i, j) * inv_tau - lse_t_nt;
      row_nckd += xlogx_over_y(log_qt, log_qs);
      if (grad) {
        const double qs = std::exp(log_qs), qt = std::exp(log_qt);
        const double bs = std::exp(log_bs), bt = std::exp(log_bt);
        (*grad)(i, j) = dkd_alpha * (-tau * (bs - bt) * qs) + dkd_beta * tau * (qs - qt);
      }
    }
    nckd += row_nckd;
    if (grad) (*grad)(i, c) = dkd_alpha * tau * (std::exp(log_bs) - std::exp(log_bt));
  }
  const double scale = tau * tau / static_cast<double>(n);
  LossBreakdown out;
  const double tckd_mean = std::max(tckd, 0.0) * scale;
  const double nckd_mean = std::max(nckd, 0.0) * scale;
  out.extra["tckd"] = tckd_mean;
  out.extra["nckd"] = nckd_mean;
  out.soft_component = dkd_alpha * tckd_mean + dkd_beta * nckd_mean;
  out.total = out.soft_component;
  if (grad) *grad /= static_cast<double>(n);
  return out;
}

double inter_class_relation(const Matrix& student_probs, const Matrix& teacher_probs,
                            Matrix* grad_student_probs) {
  require_same_shape(student_probs, teacher_probs);
  return mean_pearson_distance(student_probs, teacher_probs, grad_student_probs);
}

double intra_class_relation(const Matrix& student_probs, const Matrix& teacher_probs,
                            Matrix* grad_student_probs) {
  require_same_shape(student_probs, teacher_probs);
  Matrix st = student_probs.transpose(), tt = teacher_probs.transpose();
  Matrix g;
  double v = mean_pearson_distance(st, tt, grad_student_probs ? &g : nullptr);
  if (grad_student_probs) *grad_student_probs = g.transpose();
  return v;
}

LossBreakdown dist_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                        const HardTargets& targets, double dist_beta, double dist_gamma,
                        LabelLoss label_kind, double smoothing, double tau, Matrix* grad) {
  require_logits(student_logits, "student logits");
  require_logits(teacher_logits, "teacher logits");
  require_same_shape(student_logits, teacher_logits);
  if (student_logits.rows() < 2) {
    fail(ErrorKind::Batch, "DIST's intra-class relation needs a batch of at least 2");
  }
  Matrix ys = softmax_temperature(student_logits, tau);
  Matrix yt = softmax_temperature(teacher_logits, tau);
  Matrix g_inter, g_intra, g_cls;
  const double t2 = tau * tau;
  LossBreakdown out;
  const double inter = t2 * inter_class_relation(ys, yt, grad ? &g_inter : nullptr);
  const double intra = t2 * intra_class_relation(ys, yt, grad ? &g_intra : nullptr);
  out.hard_component = label_loss(student_logits, targets, label_kind, smoothing, grad ? &g_cls : nullptr);
  out.extra["inter"] = inter;
  out.extra["intra"] = intra;
  out.soft_component = dist_beta * inter + dist_gamma * intra;
  out.total = out.hard_component + out.soft_component;
  if (grad) {
    Matrix g_probs = t2 * (dist_beta * g_inter + dist_gamma * g_intra);
    *grad = g_cls + softmax_backward(ys, g_probs, tau);
  }
  return out;
}

LossBreakdown logits_objective(const Matrix& student_logits, const Matrix& teacher_logits,
                               const HardTargets& targets, const LogitLossSettings& settings,
                               bool hard_labels, Matrix* grad) {
  LossBreakdown out;
  switch (settings.method) {
    case Method::KD: {
      LogitLossSettings s = settings;
      if (!hard_labels) s.alpha = 0.0;
      LossBreakdown raw = vanilla_kd_loss(student_logits, teacher_logits, targets, s, grad);
      out = raw;
      out.hard_component = s.alpha * raw.hard_component;
      out.soft_component = (1.0 - s.alpha) * raw.soft_component;
      return out;
    }
    case Method::DKD: {
      std::vector<std::int64_t> dominant = targets.dominant();
      Matrix g_soft, g_hard;
      out = dkd_loss(student_logits, teacher_logits, dominant, settings.dkd_alpha,
                     settings.dkd_beta, settings.temperature, grad ? &g_soft : nullptr);
      if (hard_labels) {
        out.hard_component = label_loss(student_logits, targets, settings.label_loss,
                                        settings.label_smoothing, grad ? &g_hard : nullptr);
      }
      out.total = out.hard_component + out.soft_component;
      if (grad) *grad = hard_labels ? Matrix(g_soft + g_hard) : g_soft;
      return out;
    }
    case Method::DIST: {
      LabelLoss kind = hard_labels ? settings.label_loss : LabelLoss::NONE;
      return dist_loss(student_logits, teacher_logits, targets, settings.dist_beta,
                       settings.dist_gamma, kind, settings.label_smoothing, settings.temperature,
                       grad);
    }
    default:
      fail(ErrorKind::Config, "method " + to_string(settings.method) + " is not logits-based");
  }
}

}  // namespace kd
