#include "fepn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fepn/autodiff.hpp"
#include "fepn/errors.hpp"
#include "fepn/parallel.hpp"
#include "fepn/special_math.hpp"
#include "fepn/synth_data.hpp"

namespace fepn {
namespace {

constexpr std::size_t kChunkCells = 256;

void require_normalized(std::span<const double> v, const char* what) {
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0)) throw DomainError(std::string(what) + ": negative or NaN entry");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw DomainError(std::string(what) + ": does not sum to 1");
}

void require_field_shape(const BetaField& field, std::span<const std::uint8_t> labels,
                         const char* what) {
  require_shape(labels.size() == field.size(),
                std::string(what) + ": label grid does not match BetaField");
}

double uce_bracket(const BetaParams& p) {
  return special::digamma(p.alpha + p.beta) - special::digamma(p.alpha) -
         special::digamma(p.beta);
}

double bce_of_variance(double var, std::uint8_t target, bool normalize) {
  const double v = std::clamp(normalize ? 12.0 * var : var, kProbFloor, 1.0 - kProbFloor);
  return target == 1 ? -std::log(v) : -std::log1p(-v);
}

double out_term(double var, std::uint8_t m, OutMode mode) {
  if (mode == OutMode::kLiteral) return std::max(-static_cast<double>(m) * var, 0.0);
  return static_cast<double>(m) * (kMaxBetaVariance - var);
}

struct CellValues {
  double ce = 0.0;
  double uce = 0.0;  // unscaled
  double var = 0.0;
  double out = 0.0;
};

CellValues cell_values(double lp_in, double lp_out, const std::array<double, 2>& logits,
                       std::uint8_t label, const LossConfig& cfg) {
  const BetaParams p = beta_from_mode(cfg.beta_mode, lp_in, lp_out);
  const std::uint8_t m = static_cast<std::uint8_t>(1 - label);
  const auto prob = softmax2(logits);
  const double variance = beta_variance(p);
  CellValues v;
  v.ce = -std::log(std::clamp(prob[label == 1 ? 0 : 1], kProbFloor, 1.0));
  v.uce = (label == 1 ? uce_bracket(p) : 0.0) - cfg.lambda_reg * beta_diff_entropy(p);
  v.var = bce_of_variance(variance, m, cfg.var_normalized);
  v.out = out_term(variance, m, cfg.out_mode);
  return v;
}

// Records one cell's weighted objective on `tape`; the first four nodes are
// lp_in, lp_out, logit_in, logit_out.
CellValues record_cell(autodiff::Tape& tape, double lp_in, double lp_out,
                       const std::array<double, 2>& logits, std::uint8_t label,
                       const LossConfig& cfg, const LossWeights& w, double inv_n,
                       autodiff::Var& objective) {
  using namespace autodiff;
  const Var z_in = tape.variable(lp_in);
  const Var z_out = tape.variable(lp_out);
  const Var l0 = tape.variable(logits[0]);
  const Var l1 = tape.variable(logits[1]);
  const std::uint8_t m = static_cast<std::uint8_t>(1 - label);

  Var alpha, beta;
  if (cfg.beta_mode == BetaMode::kSoftplusLogit) {
    alpha = 1.0 + softplus(z_in);
    beta = 1.0 + softplus(z_out);
  } else {
    alpha = floor_at(1.0 + z_in, 1.0 + kContextualFloor);
    beta = floor_at(1.0 + z_out, 1.0 + kContextualFloor);
  }

  // Cross-entropy of the residual head against the one-hot label.
  const double shift = std::max(logits[0], logits[1]);
  const Var e0 = exp(l0 - shift);
  const Var e1 = exp(l1 - shift);
  const Var p_target = (label == 1 ? e0 : e1) / (e0 + e1);
  const Var ce = -log(clamp(p_target, kProbFloor, 1.0));

  const Var entropy = beta_diff_entropy(alpha, beta);
  Var uce = -cfg.lambda_reg * entropy;
  if (label == 1) uce = (digamma(alpha + beta) - digamma(alpha) - digamma(beta)) + uce;

  const Var variance = beta_variance(alpha, beta);
  const Var v = clamp(cfg.var_normalized ? 12.0 * variance : variance, kProbFloor, 1.0 - kProbFloor);
  const Var var = m == 1 ? -log(v) : -log(1.0 - v);

  Var out;
  if (cfg.out_mode == OutMode::kLiteral) {
    out = floor_at(-static_cast<double>(m) * variance, 0.0);
  } else {
    out = static_cast<double>(m) * (kMaxBetaVariance - variance);
  }

  objective = (w.ce * inv_n) * ce + (w.uce * cfg.uce_scale) * uce + (w.var * inv_n) * var +
              w.out * out;
  return CellValues{ce.value(), uce.value(), var.value(), out.value()};
}

}  // namespace

OutMode parse_out_mode(const std::string& name) {
  if (name == "literal") return OutMode::kLiteral;
  if (name == "hinge") return OutMode::kHinge;
  throw DomainError("unknown out mode: " + name);
}

std::string to_string(OutMode mode) { return mode == OutMode::kLiteral ? "literal" : "hinge"; }

LossWeights LossWeights::from_config(const LossConfig& cfg) {
  return {1.0, cfg.lambda1, cfg.lambda2, cfg.out_enabled ? 1.0 : 0.0};
}

double ce_loss(std::span<const double> pred, std::span<const double> target) {
  require_shape(pred.size() == target.size(), "ce_loss: size mismatch");
  require_normalized(pred, "ce_loss pred");
  require_normalized(target, "ce_loss target");
  double loss = 0.0;
  for (std::size_t c = 0; c < pred.size(); ++c) {
    if (target[c] != 0.0) loss -= target[c] * std::log(std::clamp(pred[c], kProbFloor, 1.0));
  }
  return loss;
}

double uce_loss(const BetaField& field, std::span<const std::uint8_t> inlier_labels,
                double lambda_reg, double scale) {
  require_field_shape(field, inlier_labels, "uce_loss");
  if (!(lambda_reg >= 0.0)) throw DomainError("uce_loss: lambda_reg must be >= 0");
  double sum = 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) {
    const auto& p = field[i];
    double term = inlier_labels[i] == 1 ? uce_bracket(p) : 0.0;
    if (lambda_reg != 0.0) term -= lambda_reg * beta_diff_entropy(p);
    sum += term;
  }
  return scale * sum;
}

double var_consistency_loss(const BetaField& field, std::span<const std::uint8_t> ood_mask,
                            bool normalize) {
  require_field_shape(field, ood_mask, "var_consistency_loss");
  double sum = 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) {
    sum += bce_of_variance(beta_variance(field[i]), ood_mask[i], normalize);
  }
  return sum / static_cast<double>(field.size());
}

double out_loss(const BetaField& field, std::span<const std::uint8_t> ood_mask, OutMode mode) {
  require_field_shape(field, ood_mask, "out_loss");
  double sum = 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) {
    sum += out_term(beta_variance(field[i]), ood_mask[i], mode);
  }
  return sum;
}

double buce_total(double ce, double uce, double var, double lambda1, double lambda2) {
  for (double x : {ce, uce, var, lambda1, lambda2}) {
    if (!std::isfinite(x)) throw DomainError("buce_total: non-finite input");
  }
  return ce + lambda1 * uce + lambda2 * var;
}

ModelGradients ModelGradients::zeros_like(const PosteriorModel& model) {
  return {std::vector<double>(model.flows.flow_in.param_count(), 0.0),
          std::vector<double>(model.flows.flow_out.param_count(), 0.0),
          std::vector<double>(model.head.param_count(), 0.0)};
}

std::vector<double> ModelGradients::concat() const {
  std::vector<double> all(flow_in);
  all.insert(all.end(), flow_out.begin(), flow_out.end());
  all.insert(all.end(), head.begin(), head.end());
  return all;
}

LossBreakdown evaluate_buce(const PosteriorModel& model, const LabeledGrid& grid,
                            const LossConfig& cfg, const LossWeights& weights,
                            ModelGradients* grad) {
  const auto& flows = model.flows;
  require_shape(grid.dim() == flows.flow_in.dim(), "evaluate_buce: grid/flow dimension mismatch");
  require_shape(grid.dim() == model.head.dim(), "evaluate_buce: grid/head dimension mismatch");
  const std::size_t n = grid.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t n_chunks = (n + kChunkCells - 1) / kChunkCells;

  struct ChunkResult {
    CellValues sums;
    ModelGradients grad;
  };
  std::vector<ChunkResult> results(n_chunks);

  parallel_chunks(n_chunks, [&](std::size_t chunk) {
    auto& res = results[chunk];
    if (grad != nullptr) res.grad = ModelGradients::zeros_like(model);
    FlowTape tape_in(flows.flow_in);
    FlowTape tape_out(flows.flow_out);
    autodiff::Tape tape;
    tape.reserve(64);
    const std::size_t begin = chunk * kChunkCells;
    const std::size_t end = std::min(n, begin + kChunkCells);
    for (std::size_t i = begin; i < end; ++i) {
      const auto x = grid.feature(i);
      const double lp_in = tape_in.forward(x);
      const double lp_out = tape_out.forward(x);
      const auto logits = model.head.logits(x);
      CellValues v;
      if (grad == nullptr) {
        v = cell_values(lp_in, lp_out, logits, grid.label(i), cfg);
      } else {
        tape.clear();
        autodiff::Var objective;
        v = record_cell(tape, lp_in, lp_out, logits, grid.label(i), cfg, weights, inv_n,
                        objective);
        const auto adj = tape.gradient(objective);
        // Leaves 0..3: lp_in, lp_out, logit_in, logit_out.
        if (adj[0] != 0.0) tape_in.backward(adj[0], res.grad.flow_in);
        if (adj[1] != 0.0) tape_out.backward(adj[1], res.grad.flow_out);
        if (adj[2] != 0.0 || adj[3] != 0.0) model.head.backward(x, {adj[2], adj[3]}, res.grad.head);
      }
      res.sums.ce += v.ce;
      res.sums.uce += v.uce;
      res.sums.var += v.var;
      res.sums.out += v.out;
    }
  });

  CellValues total;
  if (grad != nullptr) *grad = ModelGradients::zeros_like(model);
  for (const auto& res : results) {
    total.ce += res.sums.ce;
    total.uce += res.sums.uce;
    total.var += res.sums.var;
    total.out += res.sums.out;
    if (grad != nullptr) {
      auto add = [](std::vector<double>& dst, const std::vector<double>& src) {
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      };
      add(grad->flow_in, res.grad.flow_in);
      add(grad->flow_out, res.grad.flow_out);
      add(grad->head, res.grad.head);
    }
  }

  LossBreakdown out;
  out.ce = total.ce * inv_n;
  out.uce = cfg.uce_scale * total.uce;
  out.var = total.var * inv_n;
  out.out = total.out;
  out.total = weights.ce * out.ce + weights.uce * out.uce + weights.var * out.var +
              weights.out * out.out;
  return out;
}

GradCheckReport grad_check(const PosteriorModel& model, const LabeledGrid& grid,
                           const LossConfig& cfg, const LossWeights& weights, double h) {
  ModelGradients analytic_grad;
  evaluate_buce(model, grid, cfg, weights, &analytic_grad);
  const auto analytic = analytic_grad.concat();

  const auto in0 = model.flows.flow_in.flat();
  const auto out0 = model.flows.flow_out.flat();
  const auto head0 = model.head.params();
  const std::size_t n_in = in0.size();
  const std::size_t n_out = out0.size();

  PosteriorModel probe = model;
  auto objective_with = [&](std::size_t k, double delta) {
    if (k < n_in) {
      auto p = in0;
      p[k] += delta;
      probe.flows.flow_in.set_flat(p);
    } else if (k < n_in + n_out) {
      auto p = out0;
      p[k - n_in] += delta;
      probe.flows.flow_out.set_flat(p);
    } else {
      probe.head.params()[k - n_in - n_out] += delta;
    }
    const double value = evaluate_buce(probe, grid, cfg, weights).total;
    if (k < n_in) {
      probe.flows.flow_in.set_flat(in0);
    } else if (k < n_in + n_out) {
      probe.flows.flow_out.set_flat(out0);
    } else {
      probe.head.params() = head0;
    }
    return value;
  };

  GradCheckReport report;
  report.params_checked = analytic.size();
  const std::size_t bounds[4] = {0, n_in, n_in + n_out, analytic.size()};
  double diff_sq[3] = {0.0, 0.0, 0.0};
  double a_sq[3] = {0.0, 0.0, 0.0};
  double fd_sq[3] = {0.0, 0.0, 0.0};
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double fd = (objective_with(k, h) - objective_with(k, -h)) / (2.0 * h);
    const double a = analytic[k];
    const std::size_t group = k < bounds[1] ? 0 : (k < bounds[2] ? 1 : 2);
    diff_sq[group] += (a - fd) * (a - fd);
    a_sq[group] += a * a;
    fd_sq[group] += fd * fd;
    if (a != 0.0 || fd != 0.0) report.all_zero = false;
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
    if (rel > report.max_rel_error || k == 0) {
      report.max_rel_error = rel;
      report.worst_param = k;
      report.analytic_at_worst = a;
      report.numeric_at_worst = fd;
    }
  }
  for (std::size_t g = 0; g < 3; ++g) {
    const double scale = std::sqrt(std::max(a_sq[g], fd_sq[g]));
    if (scale > 0.0) report.norm_rel_error = std::max(report.norm_rel_error, std::sqrt(diff_sq[g]) / scale);
  }
  return report;
}

}  // namespace fepn
