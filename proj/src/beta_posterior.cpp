#include "fepn/beta_posterior.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "fepn/errors.hpp"
#include "fepn/special_math.hpp"

namespace fepn {

BetaParams BetaParams::make(double alpha, double beta) {
  if (!std::isfinite(alpha) || !std::isfinite(beta) || alpha < 1.0 || beta < 1.0) {
    throw DomainError("BetaParams requires finite alpha, beta >= 1");
  }
  return BetaParams{alpha, beta};
}

BetaMode parse_beta_mode(const std::string& name) {
  if (name == "softplus-logit" || name == "softplus") return BetaMode::kSoftplusLogit;
  if (name == "contextual") return BetaMode::kContextual;
  throw DomainError("unknown beta mode: " + name);
}

std::string to_string(BetaMode mode) {
  return mode == BetaMode::kSoftplusLogit ? "softplus-logit" : "contextual";
}

BetaParams beta_from_logits(double z_in, double z_out) {
  if (!std::isfinite(z_in) || !std::isfinite(z_out)) {
    throw DomainError("beta_from_logits: non-finite logit");
  }
  return BetaParams{1.0 + special::softplus(z_in), 1.0 + special::softplus(z_out)};
}

BetaParams beta_from_log_densities(double log_p_in, double log_p_out) {
  if (std::isnan(log_p_in) || std::isnan(log_p_out) || log_p_in == INFINITY ||
      log_p_out == INFINITY) {
    throw DomainError("beta_from_log_densities: invalid log density");
  }
  constexpr double kFloor = 1.0 + kContextualFloor;
  return BetaParams{std::max(1.0 + log_p_in, kFloor), std::max(1.0 + log_p_out, kFloor)};
}

BetaParams beta_from_mode(BetaMode mode, double log_p_in, double log_p_out) {
  return mode == BetaMode::kSoftplusLogit ? beta_from_logits(log_p_in, log_p_out)
                                          : beta_from_log_densities(log_p_in, log_p_out);
}

double beta_from_budget(double p_class, double p_z, double beta_prior, double n_budget) {
  if (!(p_class >= 0.0 && p_class <= 1.0)) throw DomainError("p_class must lie in [0, 1]");
  if (!(p_z >= 0.0) || !(n_budget >= 0.0)) throw DomainError("negative density or budget");
  if (!(beta_prior > 0.0)) throw DomainError("beta_prior must be > 0");
  return beta_prior + n_budget * p_class * p_z;
}

double expected_inlier(const BetaParams& p) { return p.alpha / (p.alpha + p.beta); }

double expected_inlier_from_densities(double p_in, double p_out) {
  if (!(p_in >= 0.0) || !(p_out >= 0.0)) throw DomainError("densities must be >= 0");
  if (p_in + p_out == 0.0) throw DegenerateInputError("both densities are zero");
  return p_in / (p_in + p_out);
}

int predict_label(const BetaParams& p, double tau) {
  return expected_inlier(p) >= tau ? 1 : 0;
}

double beta_variance(const BetaParams& p) {
  const double s = p.alpha + p.beta;
  return p.alpha * p.beta / (s * s * (s + 1.0));
}

double beta_diff_entropy(const BetaParams& p) {
  const double a = p.alpha;
  const double b = p.beta;
  const double s = a + b;
  // Symmetric evaluation order keeps H(a, b) == H(b, a) bit-for-bit.
  const double lo = a < b ? a : b;
  const double hi = a < b ? b : a;
  return special::log_beta(a, b) - ((lo - 1.0) * special::digamma(lo) +
                                    (hi - 1.0) * special::digamma(hi)) +
         (s - 2.0) * special::digamma(s);
}

std::pair<double, double> variance_grad(const BetaParams& p) {
  // Var = ab / (s^2 (s+1)); d/da = b / (s^2 (s+1)) - ab (3s + 2) / (s^3 (s+1)^2).
  const double a = p.alpha;
  const double b = p.beta;
  const double s = a + b;
  const double denom = s * s * (s + 1.0);
  const double common = a * b * (3.0 * s + 2.0) / (s * denom * (s + 1.0));
  return {b / denom - common, a / denom - common};
}

std::pair<double, double> diff_entropy_grad(const BetaParams& p) {
  const double a = p.alpha;
  const double b = p.beta;
  const double s = a + b;
  const double shared = (s - 2.0) * special::trigamma(s);
  return {shared - (a - 1.0) * special::trigamma(a), shared - (b - 1.0) * special::trigamma(b)};
}

BetaField::BetaField(std::size_t height, std::size_t width, std::vector<BetaParams> params)
    : height_(height), width_(width), params_(std::move(params)) {
  require_shape(height > 0 && width > 0, "BetaField: empty grid");
  require_shape(params_.size() == height * width, "BetaField: cell count != height*width");
  for (const auto& p : params_) (void)BetaParams::make(p.alpha, p.beta);
}

BetaField::BetaField(std::size_t height, std::size_t width, BetaParams fill)
    : BetaField(height, width, std::vector<BetaParams>(height * width, fill)) {}

void BetaField::write_csv(std::ostream& os) const {
  os << "row,col,alpha,beta\n" << std::setprecision(17);
  for (std::size_t r = 0; r < height_; ++r) {
    for (std::size_t c = 0; c < width_; ++c) {
      const auto& p = at(r, c);
      os << r << ',' << c << ',' << p.alpha << ',' << p.beta << '\n';
    }
  }
}

}  // namespace fepn
