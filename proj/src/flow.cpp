#include "fepn/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "fepn/beta_posterior.hpp"
#include "fepn/errors.hpp"
#include "fepn/synth_data.hpp"

namespace fepn {
namespace {

// Hidden activation x / sqrt(1 + x^2): smooth, bounded in (-1, 1), with
// derivative (1 - h^2)^(3/2) expressible through the output h.
void mlp_hidden(const Mlp& net, const double* __restrict xa, double* __restrict h) {
  const std::size_t in = net.in;
  const std::size_t hidden = net.hidden;
  const double* __restrict w1 = net.w1.data();
  const double* __restrict b1 = net.b1.data();
  for (std::size_t k = 0; k < hidden; ++k) h[k] = b1[k];
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = xa[i];
    const double* __restrict col = w1 + i * hidden;
    for (std::size_t k = 0; k < hidden; ++k) h[k] += col[k] * xi;
  }
  for (std::size_t k = 0; k < hidden; ++k) h[k] = h[k] / std::sqrt(1.0 + h[k] * h[k]);
}

double activation_slope(double h) {
  const double c = 1.0 - h * h;
  return c * std::sqrt(c);
}

// Fixed four-way split so the compiler can vectorize without reassociating.
double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    for (std::size_t l = 0; l < 4; ++l) acc[l] += a[k + l] * b[k + l];
  }
  for (; k < n; ++k) acc[0] += a[k] * b[k];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

double mlp_output(const Mlp& net, const double* __restrict h, std::size_t j) {
  return net.b2[j] + dot(net.w2.data() + j * net.hidden, h, net.hidden);
}

// Reverse pass through one Mlp. Parameter gradients go to grad[offset...],
// the input gradient is added to gxa when non-null.
void mlp_backward(const Mlp& net, const double* __restrict xa, const double* __restrict h,
                  const double* __restrict gout, double* __restrict grad,
                  double* __restrict ghid, double* __restrict gxa) {
  const std::size_t in = net.in;
  const std::size_t hidden = net.hidden;
  double* __restrict g_w1 = grad;
  double* __restrict g_b1 = g_w1 + net.w1.size();
  double* __restrict g_w2 = g_b1 + net.b1.size();
  double* __restrict g_b2 = g_w2 + net.w2.size();
  const double* __restrict w1 = net.w1.data();
  const double* __restrict w2 = net.w2.data();
  for (std::size_t k = 0; k < hidden; ++k) ghid[k] = 0.0;
  for (std::size_t j = 0; j < net.out; ++j) {
    const double g = gout[j];
    g_b2[j] += g;
    const double* __restrict row = w2 + j * hidden;
    double* __restrict grow = g_w2 + j * hidden;
    for (std::size_t k = 0; k < hidden; ++k) {
      grow[k] += g * h[k];
      ghid[k] += row[k] * g;
    }
  }
  for (std::size_t k = 0; k < hidden; ++k) {
    ghid[k] *= activation_slope(h[k]);
    g_b1[k] += ghid[k];
  }
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = xa[i];
    double* __restrict gcol = g_w1 + i * hidden;
    for (std::size_t k = 0; k < hidden; ++k) gcol[k] += ghid[k] * xi;
  }
  if (gxa != nullptr) {
    for (std::size_t i = 0; i < in; ++i) gxa[i] += dot(w1 + i * hidden, ghid, hidden);
  }
}

template <typename Model, typename Fn>
void for_each_param_vector(Model& model, Fn&& fn) {
  for (auto& block : model.blocks()) {
    for (auto* net : {&block.scale_net(), &block.shift_net()}) {
      fn(net->w1);
      fn(net->b1);
      fn(net->w2);
      fn(net->b2);
    }
  }
  fn(model.head().mu);
  fn(model.head().log_diag);
  fn(model.head().lower);
}

}  // namespace

Mlp::Mlp(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim)
    : in(in_dim),
      hidden(hidden_dim),
      out(out_dim),
      w1(hidden_dim * in_dim, 0.0),
      b1(hidden_dim, 0.0),
      w2(out_dim * hidden_dim, 0.0),
      b2(out_dim, 0.0) {}

CouplingBlock::CouplingBlock(std::vector<std::uint8_t> mask, std::size_t hidden)
    : mask_(std::move(mask)) {
  for (std::size_t d = 0; d < mask_.size(); ++d) {
    if (mask_[d] > 1) throw DomainError("coupling mask must be binary");
    (mask_[d] == 1 ? cond_ : trans_).push_back(d);
  }
  if (cond_.empty() || trans_.empty()) {
    throw DomainError("coupling mask must be neither all-zeros nor all-ones");
  }
  if (hidden == 0) throw DomainError("coupling net needs a hidden layer");
  scale_ = Mlp(cond_.size(), hidden, trans_.size());
  shift_ = Mlp(cond_.size(), hidden, trans_.size());
}

double CouplingBlock::forward(std::span<const double> x, std::span<double> y) const {
  require_shape(x.size() == dim() && y.size() == dim(), "CouplingBlock::forward: dimension mismatch");
  std::vector<double> xa(cond_.size());
  for (std::size_t i = 0; i < cond_.size(); ++i) xa[i] = x[cond_[i]];
  std::vector<double> hs(scale_.hidden), ht(shift_.hidden);
  mlp_hidden(scale_, xa.data(), hs.data());
  mlp_hidden(shift_, xa.data(), ht.data());
  std::copy(x.begin(), x.end(), y.begin());
  double log_det = 0.0;
  for (std::size_t j = 0; j < trans_.size(); ++j) {
    const double s = kScaleBound * std::tanh(mlp_output(scale_, hs.data(), j) / kScaleBound);
    const double t = mlp_output(shift_, ht.data(), j);
    y[trans_[j]] = x[trans_[j]] * std::exp(s) + t;
    log_det += s;
  }
  return log_det;
}

void CouplingBlock::inverse(std::span<const double> y, std::span<double> x) const {
  require_shape(x.size() == dim() && y.size() == dim(), "CouplingBlock::inverse: dimension mismatch");
  std::vector<double> xa(cond_.size());
  for (std::size_t i = 0; i < cond_.size(); ++i) xa[i] = y[cond_[i]];
  std::vector<double> hs(scale_.hidden), ht(shift_.hidden);
  mlp_hidden(scale_, xa.data(), hs.data());
  mlp_hidden(shift_, xa.data(), ht.data());
  std::copy(y.begin(), y.end(), x.begin());
  for (std::size_t j = 0; j < trans_.size(); ++j) {
    const double s = kScaleBound * std::tanh(mlp_output(scale_, hs.data(), j) / kScaleBound);
    const double t = mlp_output(shift_, ht.data(), j);
    x[trans_[j]] = (y[trans_[j]] - t) * std::exp(-s);
  }
}

GaussianHead::GaussianHead(std::size_t dim)
    : mu(dim, 0.0), log_diag(dim, 0.0), lower(dim * (dim - 1) / 2, 0.0) {}

double gaussian_log_density(const GaussianHead& head, std::span<const double> u,
                            bool include_const) {
  const std::size_t dim = head.dim();
  require_shape(u.size() == dim, "gaussian_log_density: dimension mismatch");
  double log_det = 0.0;
  double quad = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    log_det += head.log_diag[i];
    double r = std::exp(head.log_diag[i]) * (u[i] - head.mu[i]);
    for (std::size_t j = 0; j < i; ++j) r += head.lower[lower_index(i, j)] * (u[j] - head.mu[j]);
    quad += r * r;
  }
  double value = log_det - 0.5 * quad;
  if (include_const) value -= 0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi);
  return value;
}

FlowModel::FlowModel(std::size_t dim, std::size_t blocks, std::size_t hidden, std::uint64_t seed)
    : dim_(dim), hidden_(hidden), head_(dim) {
  if (dim < 2) throw DomainError("FlowModel: coupling flows need dim >= 2");
  if (dim > kMaxDim) throw DomainError("FlowModel: dim exceeds " + std::to_string(kMaxDim));
  std::mt19937_64 rng(seed);
  for (std::size_t b = 0; b < blocks; ++b) {
    std::vector<std::uint8_t> mask(dim);
    for (std::size_t d = 0; d < dim; ++d) mask[d] = (d + b) % 2 == 0 ? 1 : 0;
    CouplingBlock block(std::move(mask), hidden);
    for (auto* net : {&block.scale_net(), &block.shift_net()}) {
      std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(net->in)));
      for (auto& w : net->w1) w = init(rng);
    }
    blocks_.push_back(std::move(block));
  }
}

std::size_t FlowModel::param_count() const noexcept {
  std::size_t n = head_.param_count();
  for (const auto& b : blocks_) n += b.scale_net().param_count() + b.shift_net().param_count();
  return n;
}

std::vector<double> FlowModel::flat() const {
  std::vector<double> out;
  out.reserve(param_count());
  for_each_param_vector(*this,
                        [&](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); });
  return out;
}

void FlowModel::set_flat(std::span<const double> params) {
  require_shape(params.size() == param_count(), "FlowModel::set_flat: parameter count mismatch");
  std::size_t pos = 0;
  for_each_param_vector(*this, [&](std::vector<double>& v) {
    std::copy(params.begin() + static_cast<std::ptrdiff_t>(pos),
              params.begin() + static_cast<std::ptrdiff_t>(pos + v.size()), v.begin());
    pos += v.size();
  });
}

void FlowModel::randomize(std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, scale);
  for_each_param_vector(*this, [&](std::vector<double>& v) {
    for (auto& p : v) p = noise(rng);
  });
}

FlowOutput FlowModel::forward(std::span<const double> x) const {
  require_shape(x.size() == dim_, "FlowModel::forward: expected dim " + std::to_string(dim_) +
                                      ", got " + std::to_string(x.size()));
  FlowOutput out{std::vector<double>(x.begin(), x.end()), 0.0};
  std::vector<double> next(dim_);
  for (const auto& block : blocks_) {
    out.log_det += block.forward(out.u, next);
    out.u.swap(next);
  }
  return out;
}

std::vector<double> FlowModel::inverse(std::span<const double> u) const {
  require_shape(u.size() == dim_, "FlowModel::inverse: expected dim " + std::to_string(dim_) +
                                      ", got " + std::to_string(u.size()));
  std::vector<double> x(u.begin(), u.end());
  std::vector<double> prev(dim_);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    it->inverse(x, prev);
    x.swap(prev);
  }
  return x;
}

double FlowModel::log_prob(std::span<const double> x, bool include_const) const {
  const auto out = forward(x);
  return gaussian_log_density(head_, out.u, include_const) + out.log_det;
}

FlowTape::FlowTape(const FlowModel& model)
    : model_(model),
      cache_(model.block_count()),
      u_(model.dim()),
      r_(model.dim()),
      d_(model.dim()),
      diag_(model.dim()),
      gy_(model.dim()),
      gx_(model.dim()),
      gcond_(model.dim()),
      ghid_(model.hidden()),
      offsets_(model.block_count()) {
  std::size_t pos = 0;
  for (std::size_t b = 0; b < cache_.size(); ++b) {
    const auto& block = model.blocks()[b];
    offsets_[b] = pos;
    pos += block.scale_net().param_count() + block.shift_net().param_count();
    cache_[b].x_in.resize(model.dim());
    cache_[b].h_scale.resize(block.scale_net().hidden);
    cache_[b].h_shift.resize(block.shift_net().hidden);
    cache_[b].tanh_scale.resize(block.transformed().size());
    cache_[b].exp_s.resize(block.transformed().size());
  }
  const auto& head = model.head();
  for (std::size_t i = 0; i < diag_.size(); ++i) {
    diag_[i] = std::exp(head.log_diag[i]);
    log_norm_ += head.log_diag[i];
  }
  log_norm_ -= 0.5 * static_cast<double>(model.dim()) * std::log(2.0 * std::numbers::pi);
}

double FlowTape::forward(std::span<const double> x) {
  const std::size_t dim = model_.dim();
  require_shape(x.size() == dim, "FlowTape::forward: dimension mismatch");
  std::copy(x.begin(), x.end(), u_.begin());
  double log_det = 0.0;
  double xa[64];
  for (std::size_t b = 0; b < cache_.size(); ++b) {
    const auto& block = model_.blocks()[b];
    auto& c = cache_[b];
    std::copy(u_.begin(), u_.end(), c.x_in.begin());
    const auto& cond = block.conditioning();
    const auto& trans = block.transformed();
    for (std::size_t i = 0; i < cond.size(); ++i) xa[i] = c.x_in[cond[i]];
    mlp_hidden(block.scale_net(), xa, c.h_scale.data());
    mlp_hidden(block.shift_net(), xa, c.h_shift.data());
    for (std::size_t j = 0; j < trans.size(); ++j) {
      const double th = std::tanh(mlp_output(block.scale_net(), c.h_scale.data(), j) / kScaleBound);
      const double s = kScaleBound * th;
      const double t = mlp_output(block.shift_net(), c.h_shift.data(), j);
      c.tanh_scale[j] = th;
      c.exp_s[j] = std::exp(s);
      u_[trans[j]] = c.x_in[trans[j]] * c.exp_s[j] + t;
      log_det += s;
    }
  }
  const auto& head = model_.head();
  double quad = 0.0;
  for (std::size_t i = 0; i < dim; ++i) d_[i] = u_[i] - head.mu[i];
  for (std::size_t i = 0; i < dim; ++i) {
    double r = diag_[i] * d_[i];
    for (std::size_t j = 0; j < i; ++j) r += head.lower[lower_index(i, j)] * d_[j];
    r_[i] = r;
    quad += r * r;
  }
  return log_norm_ - 0.5 * quad + log_det;
}

void FlowTape::backward(double seed, std::span<double> grad) {
  const std::size_t dim = model_.dim();
  require_shape(grad.size() == model_.param_count(), "FlowTape::backward: gradient size mismatch");
  const auto& head = model_.head();
  double* g_head = grad.data() + (grad.size() - head.param_count());
  double* g_mu = g_head;
  double* g_ld = g_mu + dim;
  double* g_lower = g_ld + dim;

  std::fill(gy_.begin(), gy_.end(), 0.0);  // reused as d(loss)/d(d)
  for (std::size_t i = 0; i < dim; ++i) {
    const double gr = -seed * r_[i];
    const double diag = diag_[i];
    g_ld[i] += seed + gr * diag * d_[i];
    gy_[i] += gr * diag;
    for (std::size_t j = 0; j < i; ++j) {
      g_lower[lower_index(i, j)] += gr * d_[j];
      gy_[j] += gr * head.lower[lower_index(i, j)];
    }
  }
  for (std::size_t i = 0; i < dim; ++i) g_mu[i] -= gy_[i];

  double xa[64];
  double g_scale_out[64];
  double g_shift_out[64];
  for (std::size_t bi = cache_.size(); bi-- > 0;) {
    const auto& block = model_.blocks()[bi];
    const auto& c = cache_[bi];
    const auto& cond = block.conditioning();
    const auto& trans = block.transformed();
    for (std::size_t i = 0; i < cond.size(); ++i) xa[i] = c.x_in[cond[i]];
    for (std::size_t j = 0; j < trans.size(); ++j) {
      const std::size_t d = trans[j];
      const double gy = gy_[d];
      gx_[d] = gy * c.exp_s[j];
      const double gs = gy * c.x_in[d] * c.exp_s[j] + seed;  // log-det term carries the seed
      g_scale_out[j] = gs * (1.0 - c.tanh_scale[j] * c.tanh_scale[j]);
      g_shift_out[j] = gy;
    }
    const bool need_input_grad = bi > 0;
    std::fill(gcond_.begin(), gcond_.begin() + static_cast<std::ptrdiff_t>(cond.size()), 0.0);
    double* g_block = grad.data() + offsets_[bi];
    mlp_backward(block.scale_net(), xa, c.h_scale.data(), g_scale_out, g_block, ghid_.data(),
                 need_input_grad ? gcond_.data() : nullptr);
    mlp_backward(block.shift_net(), xa, c.h_shift.data(), g_shift_out,
                 g_block + block.scale_net().param_count(), ghid_.data(),
                 need_input_grad ? gcond_.data() : nullptr);
    if (!need_input_grad) break;
    for (std::size_t i = 0; i < cond.size(); ++i) gx_[cond[i]] = gy_[cond[i]] + gcond_[i];
    gy_.swap(gx_);
  }
}

ClassConditionalFlows::ClassConditionalFlows(FlowModel in, FlowModel out, double prior)
    : flow_in(std::move(in)), flow_out(std::move(out)), prior_in(prior) {
  if (!(prior_in > 0.0 && prior_in < 1.0)) throw DomainError("prior_in must lie in (0, 1)");
  require_shape(flow_in.dim() == flow_out.dim(), "inlier and outlier flows differ in dimension");
}

std::pair<double, double> class_posterior_from_logs(double log_lik_in, double log_lik_out,
                                                    double log_prior_in, double log_prior_out) {
  const double a = log_lik_in + log_prior_in;
  const double b = log_lik_out + log_prior_out;
  if (std::isnan(a) || std::isnan(b)) throw DomainError("class_posterior: NaN log-likelihood");
  if (a == -std::numeric_limits<double>::infinity() &&
      b == -std::numeric_limits<double>::infinity()) {
    throw DegenerateInputError("class_posterior: both likelihoods underflow");
  }
  const double m = std::max(a, b);
  const double ea = std::exp(a - m);
  const double eb = std::exp(b - m);
  const double z = ea + eb;
  return {ea / z, eb / z};
}

std::pair<double, double> class_posterior(const ClassConditionalFlows& flows,
                                          std::span<const double> x) {
  return class_posterior_from_logs(flows.flow_in.log_prob(x), flows.flow_out.log_prob(x),
                                   std::log(flows.prior_in), std::log1p(-flows.prior_in));
}

BetaField beta_field_from_flows(const ClassConditionalFlows& flows, const LabeledGrid& grid,
                                BetaMode mode) {
  require_shape(grid.dim() == flows.flow_in.dim(),
                "beta_field_from_flows: grid feature dim " + std::to_string(grid.dim()) +
                    " != flow dim " + std::to_string(flows.flow_in.dim()));
  std::vector<BetaParams> cells(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto x = grid.feature(i);
    cells[i] = beta_from_mode(mode, flows.flow_in.log_prob(x), flows.flow_out.log_prob(x));
  }
  return BetaField(grid.height(), grid.width(), std::move(cells));
}

}  // namespace fepn
