#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fepn/flow.hpp"
#include "fepn/losses.hpp"
#include "fepn/synth_data.hpp"

namespace fepn {

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamHyper& hyper);

struct TrainConfig {
  std::size_t steps = 2000;  // per phase
  AdamHyper adam;
  LossConfig loss;
  std::uint64_t seed = 0;
  std::size_t grid_height = 64;
  std::size_t grid_width = 64;
  double outlier_fraction = 0.25;
  std::size_t feature_dim = kDefaultFeatureDim;
  std::size_t blocks = kDefaultBlocks;
  std::size_t hidden = kDefaultHidden;
  double prior_in = 0.5;
  /// Std-dev of Gaussian jitter added to training features. The embedded
  /// features lie on a 2-D sheet; without jitter the flows collapse onto it.
  double feature_noise = 0.05;
  /// Update flow parameters during the BUCE phase (otherwise only the head moves).
  bool train_flows_in_buce = true;
  /// Skip the density phase and optimize BUCE from the identity flows.
  bool joint_from_scratch = false;
  /// Density-phase guard: stop when the mean loss of a window exceeds the
  /// previous window's mean by more than tolerance * max(1, |previous|).
  std::size_t guard_window = 50;
  double guard_tolerance = 0.05;

  void validate() const;  // throws DomainError
};

/// One row of the loss history. Density-phase rows carry the summed mean
/// NLL of both flows in `loss.total` and zeros elsewhere.
struct LossRecord {
  std::size_t step = 0;
  LossBreakdown loss;
};

using SceneSource = std::function<LabeledGrid(std::size_t step)>;

/// Fresh embedded training scene per step, keyed by (seed, stream, step).
SceneSource training_scenes(const TrainConfig& cfg, std::uint64_t stream);

inline constexpr std::uint64_t kDensityStream = 0xd0;
inline constexpr std::uint64_t kBuceStream = 0xb0;
inline constexpr std::uint64_t kEvalStream = 0xe0;

/// Identity flows and a zero residual head for the configured dimensions.
PosteriorModel initial_model(const TrainConfig& cfg);

/// Default-architecture model with small random coupling weights and each
/// Gaussian head fitted to the (regularized) covariance of `grid`, so that
/// log-densities sit where every loss term has a well-conditioned gradient.
PosteriorModel grad_check_model(const TrainConfig& cfg, const LabeledGrid& grid);

/// Mean NLL of `flow` over the listed cells; gradient of that mean added to grad.
double density_objective(const FlowModel& flow, std::span<const double> features,
                         std::size_t dim, std::span<const std::size_t> cells,
                         std::vector<double>* grad);

/// Maximum-likelihood fit of a single flow on batches of points
/// (row-major, dim columns) drawn by `batch(step)`.
std::vector<double> fit_density(FlowModel& flow, const std::function<std::vector<double>(std::size_t)>& batch,
                                std::size_t steps, const AdamHyper& hyper);

/// Fit the inlier flow on label-1 cells and the outlier flow on label-0
/// cells by minimizing mean free energy. Zero steps return `flows` unchanged.
ClassConditionalFlows fit_flows(const TrainConfig& cfg, ClassConditionalFlows flows,
                                const SceneSource& data, std::vector<LossRecord>* history = nullptr,
                                std::size_t step_offset = 0);

using BuceObserver =
    std::function<void(std::size_t step, const LossBreakdown&, const ModelGradients&)>;

/// Adam on the BUCE objective over head and (optionally) flows. Zero steps
/// return `model` unchanged.
PosteriorModel fit_buce(const TrainConfig& cfg, PosteriorModel model, const SceneSource& data,
                        std::vector<LossRecord>* history = nullptr, std::size_t step_offset = 0,
                        const BuceObserver& observer = {});

struct TrainResult {
  PosteriorModel density_only;
  PosteriorModel model;
  std::vector<LossRecord> history;
};

/// Density phase then BUCE phase. When `resume` is given, the density phase
/// is skipped and BUCE starts from it.
TrainResult train(const TrainConfig& cfg, const PosteriorModel* resume = nullptr);

inline constexpr const char* kLossCsvHeader = "step,ce,uce,var,out,total";
void write_loss_csv(std::ostream& os, std::span<const LossRecord> history);

}  // namespace fepn
