#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace fepn {

/// Beta posterior over the inlier probability. alpha is inlier
/// pseudo-evidence, beta outlier pseudo-evidence; both are >= 1 and finite.
struct BetaParams {
  double alpha = 1.0;
  double beta = 1.0;

  /// Validating constructor.
  static BetaParams make(double alpha, double beta);
};

/// How flow log-probabilities are turned into (alpha, beta).
enum class BetaMode {
  kSoftplusLogit,  ///< 1 + softplus(log p)
  kContextual,     ///< max(1 + log p, 1 + kContextualFloor)
};

inline constexpr double kContextualFloor = 1e-6;
inline constexpr double kDefaultThreshold = 0.5;

BetaMode parse_beta_mode(const std::string& name);
std::string to_string(BetaMode mode);

BetaParams beta_from_logits(double z_in, double z_out);

/// Contextual parameterization 1 + log density, floored at 1 + 1e-6.
BetaParams beta_from_log_densities(double log_p_in, double log_p_out);

BetaParams beta_from_mode(BetaMode mode, double log_p_in, double log_p_out);

/// Binary specialization of the Dirichlet certainty budget:
/// beta_prior + n_budget * p_class * p_z.
double beta_from_budget(double p_class, double p_z, double beta_prior, double n_budget);

double expected_inlier(const BetaParams& p);
double expected_inlier_from_densities(double p_in, double p_out);

/// 1 iff E[p] >= tau.
int predict_label(const BetaParams& p, double tau = kDefaultThreshold);

double beta_variance(const BetaParams& p);

/// Differential entropy of Beta(alpha, beta); 0 for the uniform Beta(1, 1),
/// negative for anything more concentrated.
double beta_diff_entropy(const BetaParams& p);

/// (dVar/dalpha, dVar/dbeta).
std::pair<double, double> variance_grad(const BetaParams& p);

/// (dH/dalpha, dH/dbeta) for the differential entropy.
std::pair<double, double> diff_entropy_grad(const BetaParams& p);

/// Row-major H x W raster of Beta parameters.
class BetaField {
 public:
  BetaField(std::size_t height, std::size_t width, std::vector<BetaParams> params);
  BetaField(std::size_t height, std::size_t width, BetaParams fill);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return params_.size(); }

  const BetaParams& at(std::size_t row, std::size_t col) const {
    return params_[row * width_ + col];
  }
  const BetaParams& operator[](std::size_t i) const { return params_[i]; }
  const std::vector<BetaParams>& cells() const noexcept { return params_; }

  /// CSV with header `row,col,alpha,beta`, 17 significant digits.
  void write_csv(std::ostream& os) const;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<BetaParams> params_;
};

}  // namespace fepn
