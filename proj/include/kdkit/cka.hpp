// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "kdkit/losses.hpp"

namespace kd {

/// Linear CKA between two activation sets over the same N samples.
/// Throws CKAUndefined when either side has zero variance.
double cka_linear(const Matrix& x, const Matrix& y);

/// Unbiased HSIC estimate from two n×n Gram matrices (n ≥ 4); the diagonals
/// are ignored.
double hsic_unbiased(const Matrix& k, const Matrix& l);

enum class HsicEstimator { BIASED, UNBIASED };

/// Accumulates the three HSIC terms over minibatches; value() forms the ratio
/// at the end. BIASED uses the Frobenius terms of each batch centered on its
/// own, so a single batch equals cka_linear. UNBIASED sums per-batch unbiased
/// HSIC estimates, which do not drift with the batch size.
class CkaAccumulator {
 public:
  void add_batch(const Matrix& x, const Matrix& y, HsicEstimator estimator = HsicEstimator::BIASED);
  /// Adds precomputed cross and self terms of one batch.
  void add_terms(double cross, double self_x, double self_y);
  double value() const;
  long batches() const { return batches_; }

 private:
  double cross_ = 0.0, self_x_ = 0.0, self_y_ = 0.0;
  long batches_ = 0;
};

struct CkaMatrix {
  std::vector<std::string> row_layers;  // model A / student
  std::vector<std::string> col_layers;  // model B / teacher
  Matrix values;
};

/// Long-form CSV: row_layer,col_layer,value.
std::string cka_to_csv(const CkaMatrix& m);

}  // namespace kd
