#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fepn/beta_posterior.hpp"
#include "fepn/flow.hpp"
#include "fepn/residual_head.hpp"

namespace fepn {

class LabeledGrid;

/// Probability floor applied wherever the log of a model output is taken.
inline constexpr double kProbFloor = 1e-12;
inline constexpr double kDefaultUceScale = 1e-7;
inline constexpr double kMaxBetaVariance = 1.0 / 12.0;

enum class OutMode {
  kLiteral,  ///< sum max(-m * Var, 0): identically zero on valid inputs
  kHinge,    ///< sum m * (1/12 - Var)
};

OutMode parse_out_mode(const std::string& name);
std::string to_string(OutMode mode);

struct LossConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  double lambda_reg = 0.01;
  double uce_scale = kDefaultUceScale;
  OutMode out_mode = OutMode::kHinge;
  bool out_enabled = true;
  BetaMode beta_mode = BetaMode::kSoftplusLogit;
  bool var_normalized = true;
};

/// Multipliers applied to (ce, uce, var, out) when forming the objective.
struct LossWeights {
  double ce = 1.0;
  double uce = 1.0;
  double var = 0.1;
  double out = 1.0;

  static LossWeights from_config(const LossConfig& cfg);
  static LossWeights only_ce() { return {1.0, 0.0, 0.0, 0.0}; }
  static LossWeights only_uce() { return {0.0, 1.0, 0.0, 0.0}; }
  static LossWeights only_var() { return {0.0, 0.0, 1.0, 0.0}; }
  static LossWeights only_out() { return {0.0, 0.0, 0.0, 1.0}; }
};

/// ce: mean cross-entropy of the residual head; uce: scaled sum over cells;
/// var: mean BCE; out: sum over cells. total is the weighted objective.
struct LossBreakdown {
  double ce = 0.0;
  double uce = 0.0;
  double var = 0.0;
  double out = 0.0;
  double total = 0.0;
};

/// -sum target_c ln max(pred_c, 1e-12). Both vectors must sum to 1 (1e-6).
double ce_loss(std::span<const double> pred, std::span<const double> target);

/// scale * sum_i [ y_i (psi(a+b) - psi(a) - psi(b)) - lambda_reg H[Beta(a, b)] ],
/// y_i = 1 for inlier cells.
double uce_loss(const BetaField& field, std::span<const std::uint8_t> inlier_labels,
                double lambda_reg, double scale = kDefaultUceScale);

/// Mean BCE between the (optionally 12x-normalized) Beta variance and the
/// OoD mask (target 1 on OoD cells).
double var_consistency_loss(const BetaField& field, std::span<const std::uint8_t> ood_mask,
                            bool normalize = true);

double out_loss(const BetaField& field, std::span<const std::uint8_t> ood_mask, OutMode mode);

/// ce + lambda1 * uce + lambda2 * var.
double buce_total(double ce, double uce, double var, double lambda1, double lambda2);

/// Flows plus residual head: every trainable parameter of the detector.
struct PosteriorModel {
  ClassConditionalFlows flows;
  ResidualHead head;

  bool operator==(const PosteriorModel&) const = default;
};

/// Gradients laid out like FlowModel::flat() / ResidualHead::params().
struct ModelGradients {
  std::vector<double> flow_in;
  std::vector<double> flow_out;
  std::vector<double> head;

  static ModelGradients zeros_like(const PosteriorModel& model);
  std::vector<double> concat() const;
};

/// Evaluate all loss terms over a grid. When `grad` is non-null it receives
/// d(objective)/d(parameter) by reverse accumulation through the flows,
/// the Gaussian heads, the Beta parameterization and each loss term.
/// Parameters the objective does not reach get exactly zero.
LossBreakdown evaluate_buce(const PosteriorModel& model, const LabeledGrid& grid,
                            const LossConfig& cfg, const LossWeights& weights,
                            ModelGradients* grad = nullptr);

inline LossBreakdown evaluate_buce(const PosteriorModel& model, const LabeledGrid& grid,
                                   const LossConfig& cfg, ModelGradients* grad = nullptr) {
  return evaluate_buce(model, grid, cfg, LossWeights::from_config(cfg), grad);
}

struct GradCheckReport {
  /// max over parameters of |a - fd| / max(|a|, |fd|, 1e-8).
  double max_rel_error = 0.0;
  /// max over parameter groups (inlier flow, outlier flow, head) of
  /// ||a - fd|| / max(||a||, ||fd||); 0 for a group whose gradients are all zero.
  double norm_rel_error = 0.0;
  std::size_t worst_param = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t params_checked = 0;
  /// True when every analytic and every numeric gradient is exactly zero.
  bool all_zero = true;
};

/// Compare analytic gradients with central differences (step h) for every
/// parameter.
GradCheckReport grad_check(const PosteriorModel& model, const LabeledGrid& grid,
                           const LossConfig& cfg, const LossWeights& weights, double h = 1e-5);

}  // namespace fepn
