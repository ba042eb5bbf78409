#include "fepn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>

#include "fepn/errors.hpp"
#include "fepn/parallel.hpp"

namespace fepn {
namespace {

constexpr std::size_t kChunkCells = 256;
constexpr std::uint64_t kNoiseStream = 0x7a;
constexpr std::uint64_t kProbeStream = 0x9c;

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.ce) && std::isfinite(l.uce) && std::isfinite(l.var) &&
         std::isfinite(l.out) && std::isfinite(l.total);
}

std::string first_bad_term(const LossBreakdown& l) {
  if (!std::isfinite(l.ce)) return "ce";
  if (!std::isfinite(l.uce)) return "uce";
  if (!std::isfinite(l.var)) return "var";
  if (!std::isfinite(l.out)) return "out";
  return "total";
}

// Tracks consecutive window means for the density-phase guard.
class WindowGuard {
 public:
  WindowGuard(std::size_t window, double tolerance) : window_(window), tolerance_(tolerance) {}

  /// Returns true when training should stop.
  bool push(double loss) {
    if (window_ == 0) return false;
    sum_ += loss;
    if (++count_ < window_) return false;
    const double mean = sum_ / static_cast<double>(window_);
    sum_ = 0.0;
    count_ = 0;
    const bool worse = has_prev_ && mean > prev_ + tolerance_ * std::max(1.0, std::abs(prev_));
    prev_ = mean;
    has_prev_ = true;
    return worse;
  }

 private:
  std::size_t window_;
  double tolerance_;
  double sum_ = 0.0;
  std::size_t count_ = 0;
  double prev_ = 0.0;
  bool has_prev_ = false;
};

void flow_adam(FlowModel& flow, std::span<const double> grad, AdamState& state,
               const AdamHyper& hyper) {
  auto params = flow.flat();
  adam_step(params, grad, state, hyper);
  flow.set_flat(params);
}

}  // namespace

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamHyper& hyper) {
  require_shape(params.size() == grads.size(), "adam_step: params/grads size mismatch");
  require_shape(state.m.size() == params.size() && state.v.size() == params.size(),
                "adam_step: optimizer state size mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= hyper.learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
  }
}

void TrainConfig::validate() const {
  if (steps == 0) throw DomainError("steps must be > 0");
  if (!(adam.learning_rate > 0.0)) throw DomainError("learning_rate must be > 0");
  if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0)) throw DomainError("adam beta1 must lie in (0, 1)");
  if (!(adam.beta2 > 0.0 && adam.beta2 < 1.0)) throw DomainError("adam beta2 must lie in (0, 1)");
  if (!(adam.epsilon > 0.0)) throw DomainError("adam epsilon must be > 0");
  if (grid_height == 0 || grid_width == 0) throw DomainError("grid dimensions must be > 0");
  if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0)) {
    throw DomainError("outlier_fraction must lie in [0, 1]");
  }
  if (feature_dim < 2 || feature_dim > kMaxDim) throw DomainError("feature_dim out of range");
  if (hidden == 0) throw DomainError("hidden width must be > 0");
  if (blocks == 0) throw DomainError("blocks must be > 0");
  if (!(prior_in > 0.0 && prior_in < 1.0)) throw DomainError("prior_in must lie in (0, 1)");
  if (!(feature_noise >= 0.0 && std::isfinite(feature_noise))) throw DomainError("feature_noise must be >= 0");
  if (!(loss.lambda_reg >= 0.0)) throw DomainError("lambda_reg must be >= 0");
  for (double x : {loss.lambda1, loss.lambda2, loss.uce_scale}) {
    if (!std::isfinite(x)) throw DomainError("loss weights must be finite");
  }
}

SceneSource training_scenes(const TrainConfig& cfg, std::uint64_t stream) {
  const FrozenBackbone backbone(cfg.seed, cfg.feature_dim);
  return [backbone, cfg, stream](std::size_t step) {
    const auto raw = mix_scene(cfg.grid_height, cfg.grid_width, cfg.outlier_fraction,
                               derive_seed(cfg.seed, stream, step));
    LabeledGrid grid = backbone.embed(raw);
    if (cfg.feature_noise <= 0.0) return grid;
    std::vector<double> features = grid.features();
    std::mt19937_64 rng(derive_seed(cfg.seed, stream ^ kNoiseStream, step));
    std::normal_distribution<double> noise(0.0, cfg.feature_noise);
    for (double& f : features) f += noise(rng);
    return LabeledGrid(grid.height(), grid.width(), grid.dim(), std::move(features), grid.labels());
  };
}

PosteriorModel initial_model(const TrainConfig& cfg) {
  FlowModel in(cfg.feature_dim, cfg.blocks, cfg.hidden, derive_seed(cfg.seed, 0xf1, 0));
  FlowModel out(cfg.feature_dim, cfg.blocks, cfg.hidden, derive_seed(cfg.seed, 0xf2, 0));
  return PosteriorModel{ClassConditionalFlows(std::move(in), std::move(out), cfg.prior_in),
                        ResidualHead(cfg.feature_dim)};
}

PosteriorModel grad_check_model(const TrainConfig& cfg, const LabeledGrid& grid) {
  require_shape(grid.dim() == cfg.feature_dim, "grad_check_model: grid/config dimension mismatch");
  PosteriorModel model = initial_model(cfg);
  auto center = [&](FlowModel& flow, std::uint64_t index) {
    flow.randomize(derive_seed(cfg.seed, kProbeStream, index), 0.05);
    const std::size_t dim = grid.dim();
    std::vector<std::vector<double>> us;
    for (std::size_t i = 0; i < grid.size(); ++i) us.push_back(flow.forward(grid.feature(i)).u);
    std::vector<double> mean(dim, 0.0);
    for (const auto& u : us) {
      for (std::size_t d = 0; d < dim; ++d) mean[d] += u[d] / static_cast<double>(us.size());
    }
    // Regularized covariance, Cholesky L, then U = L^-1 so that U^T U = cov^-1.
    std::vector<double> cov(dim * dim, 0.0);
    for (const auto& u : us) {
      for (std::size_t a = 0; a < dim; ++a) {
        for (std::size_t b = 0; b <= a; ++b) {
          cov[a * dim + b] += (u[a] - mean[a]) * (u[b] - mean[b]) / static_cast<double>(us.size());
        }
      }
    }
    double trace = 0.0;
    for (std::size_t d = 0; d < dim; ++d) trace += cov[d * dim + d];
    for (std::size_t d = 0; d < dim; ++d) cov[d * dim + d] += 0.01 * trace / static_cast<double>(dim);
    std::vector<double> chol(dim * dim, 0.0);
    for (std::size_t a = 0; a < dim; ++a) {
      for (std::size_t b = 0; b <= a; ++b) {
        double acc = cov[a * dim + b];
        for (std::size_t k = 0; k < b; ++k) acc -= chol[a * dim + k] * chol[b * dim + k];
        chol[a * dim + b] = a == b ? std::sqrt(acc) : acc / chol[b * dim + b];
      }
    }
    std::vector<double> inv(dim * dim, 0.0);
    for (std::size_t b = 0; b < dim; ++b) {
      inv[b * dim + b] = 1.0 / chol[b * dim + b];
      for (std::size_t a = b + 1; a < dim; ++a) {
        double acc = 0.0;
        for (std::size_t k = b; k < a; ++k) acc -= chol[a * dim + k] * inv[k * dim + b];
        inv[a * dim + b] = acc / chol[a * dim + a];
      }
    }
    auto& head = flow.head();
    head.mu = mean;
    for (std::size_t a = 0; a < dim; ++a) {
      head.log_diag[a] = std::log(inv[a * dim + a]);
      for (std::size_t b = 0; b < a; ++b) head.lower[lower_index(a, b)] = inv[a * dim + b];
    }
  };
  center(model.flows.flow_in, 0);
  center(model.flows.flow_out, 1);
  std::mt19937_64 rng(derive_seed(cfg.seed, kProbeStream, 2));
  std::normal_distribution<double> noise(0.0, 0.1);
  for (double& p : model.head.params()) p = noise(rng);
  return model;
}

double density_objective(const FlowModel& flow, std::span<const double> features,
                         std::size_t dim, std::span<const std::size_t> cells,
                         std::vector<double>* grad) {
  require_shape(dim == flow.dim(), "density_objective: dimension mismatch");
  if (cells.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(cells.size());
  const std::size_t n_chunks = (cells.size() + kChunkCells - 1) / kChunkCells;
  std::vector<double> sums(n_chunks, 0.0);
  std::vector<std::vector<double>> grads(grad != nullptr ? n_chunks : 0);
  parallel_chunks(n_chunks, [&](std::size_t chunk) {
    FlowTape tape(flow);
    if (grad != nullptr) grads[chunk].assign(flow.param_count(), 0.0);
    const std::size_t end = std::min(cells.size(), (chunk + 1) * kChunkCells);
    for (std::size_t k = chunk * kChunkCells; k < end; ++k) {
      const double lp = tape.forward(features.subspan(cells[k] * dim, dim));
      sums[chunk] -= lp;
      if (grad != nullptr) tape.backward(-inv_n, grads[chunk]);
    }
  });
  double total = 0.0;
  for (double s : sums) total += s;
  if (grad != nullptr) {
    grad->assign(flow.param_count(), 0.0);
    for (const auto& g : grads) {
      for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] += g[i];
    }
  }
  return total * inv_n;
}

std::vector<double> fit_density(FlowModel& flow,
                                const std::function<std::vector<double>(std::size_t)>& batch,
                                std::size_t steps, const AdamHyper& hyper) {
  AdamState state(flow.param_count());
  std::vector<double> losses;
  losses.reserve(steps);
  std::vector<double> grad;
  for (std::size_t step = 0; step < steps; ++step) {
    const auto points = batch(step);
    const std::size_t n = points.size() / flow.dim();
    std::vector<std::size_t> cells(n);
    for (std::size_t i = 0; i < n; ++i) cells[i] = i;
    const double loss = density_objective(flow, points, flow.dim(), cells, &grad);
    if (!std::isfinite(loss)) throw TrainingError(step, "nll", "density");
    flow_adam(flow, grad, state, hyper);
    losses.push_back(loss);
  }
  return losses;
}

ClassConditionalFlows fit_flows(const TrainConfig& cfg, ClassConditionalFlows flows,
                                const SceneSource& data, std::vector<LossRecord>* history,
                                std::size_t step_offset) {
  if (cfg.steps == 0) return flows;
  cfg.validate();
  AdamState state_in(flows.flow_in.param_count());
  AdamState state_out(flows.flow_out.param_count());
  WindowGuard guard(cfg.guard_window, cfg.guard_tolerance);
  std::vector<double> grad;
  std::vector<std::size_t> inliers;
  std::vector<std::size_t> outliers;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const LabeledGrid scene = data(step);
    require_shape(scene.dim() == flows.flow_in.dim(), "fit_flows: scene/flow dimension mismatch");
    inliers.clear();
    outliers.clear();
    for (std::size_t i = 0; i < scene.size(); ++i) (scene.label(i) == 1 ? inliers : outliers).push_back(i);

    LossBreakdown rec;
    if (!inliers.empty()) {
      const double nll = density_objective(flows.flow_in, scene.features(), scene.dim(), inliers, &grad);
      if (!std::isfinite(nll)) throw TrainingError(step_offset + step, "nll_in", "density");
      flow_adam(flows.flow_in, grad, state_in, cfg.adam);
      rec.total += nll;
    }
    if (!outliers.empty()) {
      const double nll = density_objective(flows.flow_out, scene.features(), scene.dim(), outliers, &grad);
      if (!std::isfinite(nll)) throw TrainingError(step_offset + step, "nll_out", "density");
      flow_adam(flows.flow_out, grad, state_out, cfg.adam);
      rec.total += nll;
    }
    if (history != nullptr) history->push_back({step_offset + step, rec});
    if (guard.push(rec.total)) break;
  }
  return flows;
}

PosteriorModel fit_buce(const TrainConfig& cfg, PosteriorModel model, const SceneSource& data,
                        std::vector<LossRecord>* history, std::size_t step_offset,
                        const BuceObserver& observer) {
  if (cfg.steps == 0) return model;
  cfg.validate();
  AdamState state_in(model.flows.flow_in.param_count());
  AdamState state_out(model.flows.flow_out.param_count());
  AdamState state_head(model.head.param_count());
  ModelGradients grad;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const LabeledGrid scene = data(step);
    LossBreakdown loss;
    try {
      loss = evaluate_buce(model, scene, cfg.loss, &grad);
    } catch (const DomainError&) {
      // Non-finite log-densities reach the Beta parameterization first.
      throw TrainingError(step_offset + step, "log_density", "buce");
    }
    if (!finite(loss)) throw TrainingError(step_offset + step, first_bad_term(loss), "buce");
    if (observer) observer(step_offset + step, loss, grad);
    adam_step(model.head.params(), grad.head, state_head, cfg.adam);
    if (cfg.train_flows_in_buce) {
      flow_adam(model.flows.flow_in, grad.flow_in, state_in, cfg.adam);
      flow_adam(model.flows.flow_out, grad.flow_out, state_out, cfg.adam);
    }
    if (history != nullptr) history->push_back({step_offset + step, loss});
  }
  return model;
}

TrainResult train(const TrainConfig& cfg, const PosteriorModel* resume) {
  cfg.validate();
  TrainResult result{resume != nullptr ? *resume : initial_model(cfg),
                     resume != nullptr ? *resume : initial_model(cfg),
                     {}};
  std::size_t offset = 0;
  if (resume == nullptr && !cfg.joint_from_scratch) {
    result.density_only.flows = fit_flows(cfg, result.density_only.flows,
                                          training_scenes(cfg, kDensityStream), &result.history);
    offset = result.history.size();
  }
  result.model = fit_buce(cfg, result.density_only, training_scenes(cfg, kBuceStream),
                          &result.history, offset);
  return result;
}

void write_loss_csv(std::ostream& os, std::span<const LossRecord> history) {
  os << kLossCsvHeader << '\n' << std::setprecision(17);
  for (const auto& r : history) {
    os << r.step << ',' << r.loss.ce << ',' << r.loss.uce << ',' << r.loss.var << ',' << r.loss.out
       << ',' << r.loss.total << '\n';
  }
}

}  // namespace fepn
