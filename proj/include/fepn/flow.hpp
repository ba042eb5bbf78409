#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace fepn {

class LabeledGrid;
class BetaField;
enum class BetaMode;

inline constexpr std::size_t kDefaultBlocks = 3;
inline constexpr std::size_t kDefaultHidden = 32;
/// Bound on the per-dimension log-scale of a coupling block.
inline constexpr double kScaleBound = 5.0;
inline constexpr std::size_t kMaxDim = 128;

/// One-hidden-layer network h = a(W1 x + b1), out = W2 h + b2 with the
/// bounded activation a(v) = v / sqrt(1 + v^2).
struct Mlp {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t out = 0;
  std::vector<double> w1;  // in x hidden (column k of W1 stored contiguously per input)
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // out x hidden
  std::vector<double> b2;  // out

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out);
  std::size_t param_count() const noexcept { return w1.size() + b1.size() + w2.size() + b2.size(); }
  bool operator==(const Mlp&) const = default;
};

/// Affine coupling layer: the unmasked half is scaled and shifted by
/// functions of the masked half. Mask entries of 1 mark conditioning dims.
class CouplingBlock {
 public:
  CouplingBlock(std::vector<std::uint8_t> mask, std::size_t hidden);

  std::size_t dim() const noexcept { return mask_.size(); }
  const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }
  const std::vector<std::size_t>& conditioning() const noexcept { return cond_; }
  const std::vector<std::size_t>& transformed() const noexcept { return trans_; }

  Mlp& scale_net() noexcept { return scale_; }
  const Mlp& scale_net() const noexcept { return scale_; }
  Mlp& shift_net() noexcept { return shift_; }
  const Mlp& shift_net() const noexcept { return shift_; }

  /// y = block(x); returns log|det J|.
  double forward(std::span<const double> x, std::span<double> y) const;
  void inverse(std::span<const double> y, std::span<double> x) const;

  bool operator==(const CouplingBlock&) const = default;

 private:
  std::vector<std::uint8_t> mask_;
  std::vector<std::size_t> cond_;
  std::vector<std::size_t> trans_;
  Mlp scale_;
  Mlp shift_;
};

/// Position of U(i, j), j < i, in GaussianHead::lower.
constexpr std::size_t lower_index(std::size_t i, std::size_t j) { return i * (i - 1) / 2 + j; }

/// Gaussian head with precision Cholesky factor U (lower triangular,
/// diag(U) = exp(log_diag)), so Sigma^-1 = U^T U.
struct GaussianHead {
  std::vector<double> mu;
  std::vector<double> log_diag;
  std::vector<double> lower;  // strictly-lower entries, row-major: (1,0), (2,0), (2,1), ...

  GaussianHead() = default;
  explicit GaussianHead(std::size_t dim);  // standard normal
  std::size_t dim() const noexcept { return mu.size(); }
  std::size_t param_count() const noexcept { return mu.size() + log_diag.size() + lower.size(); }
  bool operator==(const GaussianHead&) const = default;
};

double gaussian_log_density(const GaussianHead& head, std::span<const double> u,
                            bool include_const = true);

struct FlowOutput {
  std::vector<double> u;
  double log_det = 0.0;
};

/// Coupling-block flow followed by a Gaussian head.
class FlowModel {
 public:
  /// Identity initialization: output layers of every coupling net are zero,
  /// hidden layers are drawn from `seed`; the head is standard normal.
  FlowModel(std::size_t dim, std::size_t blocks = kDefaultBlocks,
            std::size_t hidden = kDefaultHidden, std::uint64_t seed = 0);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t block_count() const noexcept { return blocks_.size(); }

  std::vector<CouplingBlock>& blocks() noexcept { return blocks_; }
  const std::vector<CouplingBlock>& blocks() const noexcept { return blocks_; }
  GaussianHead& head() noexcept { return head_; }
  const GaussianHead& head() const noexcept { return head_; }

  /// Flattened parameters in a fixed order: per block (scale w1,b1,w2,b2,
  /// shift w1,b1,w2,b2), then head (mu, log_diag, lower).
  std::size_t param_count() const noexcept;
  std::vector<double> flat() const;
  void set_flat(std::span<const double> params);

  /// Draw every parameter (including output layers and head) from N(0, scale^2).
  void randomize(std::uint64_t seed, double scale);

  FlowOutput forward(std::span<const double> x) const;
  std::vector<double> inverse(std::span<const double> u) const;
  double log_prob(std::span<const double> x, bool include_const = true) const;
  double free_energy(std::span<const double> x) const { return -log_prob(x); }

  bool operator==(const FlowModel&) const = default;

 private:
  std::size_t dim_;
  std::size_t hidden_;
  std::vector<CouplingBlock> blocks_;
  GaussianHead head_;
};

/// Forward pass with cached intermediates for one input, and the matching
/// reverse pass. Gradients accumulate into a flat buffer laid out like
/// FlowModel::flat().
class FlowTape {
 public:
  explicit FlowTape(const FlowModel& model);

  /// Returns log p(x) (constant included).
  double forward(std::span<const double> x);

  /// Accumulate d(seed * log p)/d(params) into `grad`; returns nothing
  /// about the input (features are frozen).
  void backward(double seed, std::span<double> grad);

 private:
  struct BlockCache {
    std::vector<double> x_in;
    std::vector<double> h_scale;
    std::vector<double> h_shift;
    std::vector<double> tanh_scale;  // tanh(raw / bound) per transformed dim
    std::vector<double> exp_s;
  };

  const FlowModel& model_;
  std::vector<BlockCache> cache_;
  std::vector<double> u_;
  std::vector<double> r_;
  std::vector<double> d_;
  std::vector<double> diag_;  // exp(log_diag), fixed for the tape's lifetime
  double log_norm_ = 0.0;     // sum(log_diag) - (D/2) ln 2 pi
  // scratch for backward
  std::vector<double> gy_;
  std::vector<double> gx_;
  std::vector<double> gcond_;
  std::vector<double> ghid_;
  std::vector<std::size_t> offsets_;  // start of each block in the flat layout
};

struct ClassConditionalFlows {
  FlowModel flow_in;
  FlowModel flow_out;
  double prior_in = 0.5;

  ClassConditionalFlows(FlowModel in, FlowModel out, double prior = 0.5);
  bool operator==(const ClassConditionalFlows&) const = default;
};

/// Normalized Bayes posterior (p_in, p_out) computed in log space.
std::pair<double, double> class_posterior(const ClassConditionalFlows& flows,
                                          std::span<const double> x);

/// Same, from precomputed log-likelihoods and log-priors.
std::pair<double, double> class_posterior_from_logs(double log_lik_in, double log_lik_out,
                                                    double log_prior_in, double log_prior_out);

BetaField beta_field_from_flows(const ClassConditionalFlows& flows, const LabeledGrid& grid,
                                BetaMode mode);

}  // namespace fepn
