// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "kdkit/recipes.hpp"

namespace kd {

/// Row-major N×K matrix: one row per sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Ground truth either as class indices or as per-class weight rows (mixup/cutmix).
class HardTargets {
 public:
  HardTargets() = default;
  explicit HardTargets(std::vector<std::int64_t> indices) : data_(std::move(indices)) {}
  explicit HardTargets(Matrix weights) : data_(std::move(weights)) {}

  bool is_index() const { return std::holds_alternative<std::vector<std::int64_t>>(data_); }
  std::int64_t size() const;
  const std::vector<std::int64_t>& indices() const { return std::get<0>(data_); }
  const Matrix& weights() const { return std::get<1>(data_); }

  /// Weight rows over K classes; index targets become one-hot rows.
  Matrix dense(std::int64_t num_classes) const;
  /// Distinguished class per row: the index, or the argmax of the weight row
  /// with ties going to the lower class index.
  std::vector<std::int64_t> dominant() const;

 private:
  std::variant<std::vector<std::int64_t>, Matrix> data_;
};

struct LossBreakdown {
  double total = 0.0;
  double hard_component = 0.0;
  double soft_component = 0.0;
  std::map<std::string, double> extra;
};

/// Row-wise softmax of logits/tau with max subtraction.
Matrix softmax_temperature(const Matrix& logits, double tau);
Matrix log_softmax_temperature(const Matrix& logits, double tau);

// Every loss below reduces by the arithmetic mean over the batch. When `grad`
// is non-null it receives d(loss)/d(student_logits) with the logits' shape.

double ce_loss(const Matrix& logits, const HardTargets& targets, double smoothing,
               Matrix* grad = nullptr);

/// Mean over N·K entries of the logistic binary cross-entropy.
double bce_loss(const Matrix& logits, const HardTargets& targets, double smoothing = 0.0,
                Matrix* grad = nullptr);

/// tau² · KL(p_teacher ‖ p_student), both softened by tau.
double kl_soft_loss(const Matrix& student_logits, const Matrix& teacher_logits, double tau,
                    Matrix* grad = nullptr);

inline constexpr double kBklClamp = 1e-6;

/// Sum over classes of the binary KL between teacher and student softmax
/// marginals. Probabilities are clamped to [kBklClamp, 1 - kBklClamp].
double bkl_loss(const Matrix& student_logits, const Matrix& teacher_logits, double tau,
                Matrix* grad = nullptr);

/// Resolved knobs for the logits-based objectives.
struct LogitLossSettings {
  Method method = Method::KD;
  double alpha = 0.5;
  double temperature = 1.0;
  SoftLoss soft_loss = SoftLoss::KL;
  LabelLoss label_loss = LabelLoss::CE;
  double label_smoothing = 0.0;
  double dkd_alpha = 1.0;
  double dkd_beta = 2.0;
  double dist_beta = 1.0;
  double dist_gamma = 1.0;
};

LogitLossSettings logit_loss_settings(const DistillJobSpec& spec);

/// The recipe's hard-label loss (0 for NONE).
double label_loss(const Matrix& logits, const HardTargets& targets, LabelLoss kind,
                  double smoothing, Matrix* grad = nullptr);

/// alpha · hard + (1 - alpha) · soft.
LossBreakdown vanilla_kd_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                              const HardTargets& targets, const LogitLossSettings& settings,
                              Matrix* grad = nullptr);

/// dkd_alpha · TCKD + dkd_beta · NCKD. Extras: "tckd", "nckd".
LossBreakdown dkd_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                       std::span<const std::int64_t> target_indices, double dkd_alpha,
                       double dkd_beta, double tau, Matrix* grad = nullptr);

/// Mean over rows of 1 - pearson(student row, teacher row). Rows with zero
/// variance on either side contribute 0.
double inter_class_relation(const Matrix& student_probs, const Matrix& teacher_probs,
                            Matrix* grad_student_probs = nullptr);
/// Same relation over columns (per class across the batch).
double intra_class_relation(const Matrix& student_probs, const Matrix& teacher_probs,
                            Matrix* grad_student_probs = nullptr);

/// L_cls + beta · L_inter + gamma · L_intra, relations scaled by tau².
/// Extras: "inter", "intra".
LossBreakdown dist_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                        const HardTargets& targets, double dist_beta, double dist_gamma,
                        LabelLoss label_kind = LabelLoss::CE, double smoothing = 0.0,
                        double tau = 1.0, Matrix* grad = nullptr);

/// Dispatches on settings.method (KD, DKD or DIST) and reports the objective as
/// hard + soft. With hard_labels=false only the soft part is kept, which is
/// how soft-label-only stages run.
LossBreakdown logits_objective(const Matrix& student_logits, const Matrix& teacher_logits,
                               const HardTargets& targets, const LogitLossSettings& settings,
                               bool hard_labels = true, Matrix* grad = nullptr);

}  // namespace kd
