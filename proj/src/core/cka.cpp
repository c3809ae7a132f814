// SPDX-License-Identifier: Apache-2.0
#include "kdkit/cka.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kdkit/errors.hpp"

namespace kd {
namespace {

Matrix center_columns(const Matrix& m) { return m.rowwise() - m.colwise().mean(); }

// ‖Aᵀ B‖²_F through whichever side is smaller.
double cross_frobenius_sq(const Matrix& a, const Matrix& b) {
  if (a.rows() <= std::max(a.cols(), b.cols())) {
    Matrix ka = a * a.transpose();
    Matrix kb = b * b.transpose();
    return (ka.cwiseProduct(kb)).sum();
  }
  return (a.transpose() * b).squaredNorm();
}

struct Terms {
  double cross, self_x, self_y;
};

void check_inputs(const Matrix& x, const Matrix& y, Eigen::Index min_rows) {
  if (x.rows() != y.rows()) fail(ErrorKind::Shape, "CKA inputs must share the sample dimension");
  if (x.rows() < min_rows) {
    fail(ErrorKind::Batch, "CKA needs at least " + std::to_string(min_rows) + " samples");
  }
  if (!x.allFinite() || !y.allFinite()) fail(ErrorKind::Numeric, "CKA inputs are not finite");
}

Terms hsic_terms(const Matrix& x, const Matrix& y) {
  check_inputs(x, y, 2);
  Matrix xc = center_columns(x), yc = center_columns(y);
  return {cross_frobenius_sq(xc, yc), cross_frobenius_sq(xc, xc), cross_frobenius_sq(yc, yc)};
}

Terms unbiased_terms(const Matrix& x, const Matrix& y) {
  check_inputs(x, y, 4);
  const Matrix k = x * x.transpose(), l = y * y.transpose();
  return {hsic_unbiased(k, l), hsic_unbiased(k, k), hsic_unbiased(l, l)};
}

double ratio(double cross, double sx, double sy) {
  if (!(sx > 0) || !(sy > 0)) fail(ErrorKind::CKAUndefined, "an input has zero variance");
  double v = cross / std::sqrt(sx * sy);
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace

double hsic_unbiased(const Matrix& k, const Matrix& l) {
  const Eigen::Index n = k.rows();
  if (k.cols() != n || l.rows() != n || l.cols() != n) fail(ErrorKind::Shape, "Gram matrices must be n×n");
  if (n < 4) fail(ErrorKind::Batch, "unbiased HSIC needs at least 4 samples");
  Matrix kt = k, lt = l;
  kt.diagonal().setZero();
  lt.diagonal().setZero();
  const double nn = static_cast<double>(n);
  const Vector lrow = lt.rowwise().sum();
  const double trace = kt.cwiseProduct(lt).sum();
  const double sums = kt.sum() * lt.sum() / ((nn - 1) * (nn - 2));
  const double mixed = 2.0 * (kt.rowwise().sum().dot(lrow)) / (nn - 2);
  return (trace + sums - mixed) / (nn * (nn - 3));
}

double cka_linear(const Matrix& x, const Matrix& y) {
  Terms t = hsic_terms(x, y);
  return ratio(t.cross, t.self_x, t.self_y);
}

void CkaAccumulator::add_batch(const Matrix& x, const Matrix& y, HsicEstimator estimator) {
  const Terms t = estimator == HsicEstimator::UNBIASED ? unbiased_terms(x, y) : hsic_terms(x, y);
  cross_ += t.cross;
  self_x_ += t.self_x;
  self_y_ += t.self_y;
  ++batches_;
}

void CkaAccumulator::add_terms(double cross, double self_x, double self_y) {
  if (!std::isfinite(cross) || !std::isfinite(self_x) || !std::isfinite(self_y)) {
    fail(ErrorKind::Numeric, "CKA terms are not finite");
  }
  cross_ += cross;
  self_x_ += self_x;
  self_y_ += self_y;
  ++batches_;
}

double CkaAccumulator::value() const {
  if (batches_ == 0) fail(ErrorKind::CKAUndefined, "no batches accumulated");
  return ratio(cross_, self_x_, self_y_);
}

std::string cka_to_csv(const CkaMatrix& m) {
  std::ostringstream os;
  os.precision(10);
  os << "row_layer,col_layer,value\n";
  for (std::size_t i = 0; i < m.row_layers.size(); ++i) {
    for (std::size_t j = 0; j < m.col_layers.size(); ++j) {
      os << m.row_layers[i] << ',' << m.col_layers[j] << ','
         << m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << '\n';
    }
  }
  return os.str();
}

}  // namespace kd
