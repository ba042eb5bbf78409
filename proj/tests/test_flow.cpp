#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "fepn/beta_posterior.hpp"
#include "fepn/errors.hpp"
#include "fepn/flow.hpp"
#include "fepn/synth_data.hpp"
#include "fepn/trainer.hpp"

using namespace fepn;

namespace {

using Matrix = std::vector<std::vector<double>>;

// log|det A| by partial-pivot Gaussian elimination.
double log_abs_det(Matrix a) {
  const std::size_t n = a.size();
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    acc += std::log(std::abs(a[c][c]));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return acc;
}

Matrix inverse(Matrix a) {
  const std::size_t n = a.size();
  Matrix inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(inv[c], inv[piv]);
    const double d = a[c][c];
    for (std::size_t k = 0; k < n; ++k) {
      a[c][k] /= d;
      inv[c][k] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c];
      for (std::size_t k = 0; k < n; ++k) {
        a[r][k] -= f * a[c][k];
        inv[r][k] -= f * inv[c][k];
      }
    }
  }
  return inv;
}

// ln N(u; mu, Sigma) with Sigma formed explicitly as (U^T U)^-1.
double dense_gaussian_log_pdf(const GaussianHead& head, const std::vector<double>& u) {
  const std::size_t n = head.dim();
  Matrix U(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    U[i][i] = std::exp(head.log_diag[i]);
    for (std::size_t j = 0; j < i; ++j) U[i][j] = head.lower[lower_index(i, j)];
  }
  Matrix precision(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) precision[i][j] += U[k][i] * U[k][j];
  const Matrix sigma = inverse(precision);
  const Matrix sigma_inv = inverse(sigma);
  double quad = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      quad += (u[i] - head.mu[i]) * sigma_inv[i][j] * (u[j] - head.mu[j]);
  return -0.5 * quad - 0.5 * log_abs_det(sigma) - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST_CASE("identity initialization") {
  FlowModel model(6, 3, 16, 5);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto x = random_vector(rng, 6, 3.0);
    const auto out = model.forward(x);
    CHECK(out.u == x);
    CHECK(out.log_det == 0.0);
    CHECK(model.inverse(x) == x);
  }
}

TEST_CASE("masks alternate and are never degenerate") {
  FlowModel model(5, 3);
  for (const auto& b : model.blocks()) {
    CHECK(!b.conditioning().empty());
    CHECK(!b.transformed().empty());
    CHECK(b.conditioning().size() + b.transformed().size() == 5);
  }
  CHECK(model.blocks()[0].mask() != model.blocks()[1].mask());
  CHECK_THROWS_AS(CouplingBlock({1, 1, 1}, 4), DomainError);
  CHECK_THROWS_AS(CouplingBlock({0, 0}, 4), DomainError);
}

TEST_CASE("constant scale field gives log_det = s * transformed dims") {
  FlowModel model(2, 1, 8, 3);
  auto& block = model.blocks()[0];
  const double raw = 0.7;
  for (auto& b : block.scale_net().b2) b = raw;
  const double s = kScaleBound * std::tanh(raw / kScaleBound);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) {
    const auto x = random_vector(rng, 2);
    CHECK(model.forward(x).log_det == doctest::Approx(s * block.transformed().size()).epsilon(1e-14));
  }
}

TEST_CASE("single-block inverse matches the closed form") {
  FlowModel model(4, 1, 8, 4);
  auto& block = model.blocks()[0];
  const double raw = -1.3, shift = 0.4;
  for (auto& b : block.scale_net().b2) b = raw;
  for (auto& b : block.shift_net().b2) b = shift;
  const double s = kScaleBound * std::tanh(raw / kScaleBound);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto y = random_vector(rng, 4);
    const auto x = model.inverse(y);
    for (std::size_t d : block.conditioning()) CHECK(x[d] == y[d]);
    for (std::size_t d : block.transformed()) CHECK(std::abs(x[d] - (y[d] - shift) * std::exp(-s)) <= 1e-12);
  }
}

TEST_CASE("round trip on 1000 random vectors") {
  FlowModel model(8, 3, 32, 6);
  model.randomize(7, 0.3);
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_vector(rng, 8, 2.0);
    const auto back = model.inverse(model.forward(x).u);
    for (std::size_t d = 0; d < 8; ++d) worst = std::max(worst, std::abs(back[d] - x[d]));
    const auto u = random_vector(rng, 8, 2.0);
    const auto fwd = model.forward(model.inverse(u)).u;
    for (std::size_t d = 0; d < 8; ++d) worst = std::max(worst, std::abs(fwd[d] - u[d]));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("log_det matches a finite-difference Jacobian") {
  for (std::size_t dim : {2u, 3u, 4u}) {
    FlowModel model(dim, 3, 16, 10 + dim);
    model.randomize(20 + dim, 0.3);
    std::mt19937_64 rng(5 + dim);
    const double h = 1e-6;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const auto x = random_vector(rng, dim);
      Matrix jac(dim, std::vector<double>(dim));
      for (std::size_t c = 0; c < dim; ++c) {
        auto xp = x, xm = x;
        xp[c] += h;
        xm[c] -= h;
        const auto up = model.forward(xp).u, um = model.forward(xm).u;
        for (std::size_t r = 0; r < dim; ++r) jac[r][c] = (up[r] - um[r]) / (2.0 * h);
      }
      const auto out = model.forward(x);
      worst = std::max(worst, std::abs(out.log_det - log_abs_det(jac)));
      const double oracle = gaussian_log_density(model.head(), out.u) + log_abs_det(jac);
      worst = std::max(worst, std::abs(model.log_prob(x) - oracle));
    }
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("gaussian_log_density examples") {
  GaussianHead head(3);
  const std::vector<double> zero(3, 0.0);
  CHECK(gaussian_log_density(head, zero) == doctest::Approx(-1.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
  CHECK(gaussian_log_density(head, zero, false) == 0.0);
  CHECK_THROWS_AS(gaussian_log_density(head, std::vector<double>(2, 0.0)), ShapeError);
}

TEST_CASE("gaussian_log_density matches a dense-matrix oracle") {
  std::mt19937_64 rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t dim = 1 + trial % 6;
    GaussianHead head(dim);
    head.mu = random_vector(rng, dim);
    head.log_diag = random_vector(rng, dim, 0.3);
    head.lower = random_vector(rng, dim * (dim - 1) / 2, 0.3);
    const auto u = random_vector(rng, dim, 1.5);
    worst = std::max(worst, std::abs(gaussian_log_density(head, u) - dense_gaussian_log_pdf(head, u)));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("log_prob and free energy examples") {
  FlowModel model(2);
  const std::vector<double> x{0.0, 0.0};
  CHECK(model.log_prob(x) == doctest::Approx(-1.8378770664).epsilon(1e-10));
  CHECK(model.free_energy(x) == doctest::Approx(1.8378770664).epsilon(1e-10));
  model.randomize(3, 0.2);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_vector(rng, 2);
    REQUIRE(model.free_energy(p) == -model.log_prob(p));
  }
  FlowModel plain(3);
  double prev = plain.free_energy(std::vector<double>{0.0, 0.0, 0.0});
  for (double t = 0.1; t < 5.0; t += 0.1) {
    const double e = plain.free_energy(std::vector<double>{t, -0.5 * t, 0.3 * t});
    CHECK(e > prev);
    prev = e;
  }
  CHECK_THROWS_AS(model.forward(std::vector<double>{1.0}), ShapeError);
  CHECK_THROWS_AS(model.inverse(std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("trained 2-D flow integrates to one") {
  FlowModel flow(2, 3, 32, 1);
  AdamHyper hyper;
  hyper.learning_rate = 5e-3;
  const auto losses = fit_density(
      flow,
      [](std::size_t step) {
        std::vector<double> flat;
        for (const auto& p : make_inliers(256, derive_seed(77, 1, step))) {
          flat.push_back(p[0]);
          flat.push_back(p[1]);
        }
        return flat;
      },
      400, hyper);
  CHECK(losses.back() < losses.front());
  double mass = 0.0;
  const double step = 0.02;
  for (double a = -6.0 + step / 2; a < 6.0; a += step)
    for (double b = -6.0 + step / 2; b < 6.0; b += step)
      mass += std::exp(flow.log_prob(std::vector<double>{a, b})) * step * step;
  CHECK(mass >= 0.98);
  CHECK(mass <= 1.02);
}

TEST_CASE("FlowTape gradient matches central differences of log_prob") {
  FlowModel model(4, 3, 8, 2);
  model.randomize(9, 0.2);
  std::mt19937_64 rng(8);
  const auto x = random_vector(rng, 4);
  FlowTape tape(model);
  CHECK(tape.forward(x) == doctest::Approx(model.log_prob(x)).epsilon(1e-13));
  std::vector<double> grad(model.param_count(), 0.0);
  tape.backward(1.0, grad);

  auto params = model.flat();
  const double h = 1e-6;
  double diff2 = 0.0, norm2 = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    FlowModel probe = model;
    auto p = params;
    p[i] += h;
    probe.set_flat(p);
    const double up = probe.log_prob(x);
    p[i] -= 2.0 * h;
    probe.set_flat(p);
    const double fd = (up - probe.log_prob(x)) / (2.0 * h);
    diff2 += (grad[i] - fd) * (grad[i] - fd);
    norm2 += fd * fd;
  }
  CHECK(std::sqrt(diff2 / norm2) <= 1e-7);
}

TEST_CASE("flat parameters round trip") {
  FlowModel model(5, 3, 8, 1);
  model.randomize(2, 0.5);
  FlowModel copy(5, 3, 8, 99);
  copy.set_flat(model.flat());
  CHECK(copy == model);
  CHECK(model.flat().size() == model.param_count());
  CHECK_THROWS_AS(copy.set_flat(std::vector<double>(3, 0.0)), ShapeError);
}

TEST_CASE("class posterior examples and properties") {
  FlowModel a(3), b(3);
  ClassConditionalFlows same(a, a);
  const std::vector<double> x{0.3, -1.0, 2.0};
  auto [pin, pout] = class_posterior(same, x);
  CHECK(pin == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(pout == doctest::Approx(0.5).epsilon(1e-15));

  auto [p3, q3] = class_posterior_from_logs(std::log(3.0) - 2.0, -2.0, std::log(0.5), std::log(0.5));
  CHECK(p3 == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(q3 == doctest::Approx(0.25).epsilon(1e-14));

  a.randomize(1, 0.3);
  b.randomize(2, 0.3);
  ClassConditionalFlows flows(a, b, 0.3);
  std::mt19937_64 rng(9);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto [p, q] = class_posterior(flows, random_vector(rng, 3, 2.0));
    worst = std::max(worst, std::abs(p + q - 1.0));
  }
  CHECK(worst <= 1e-9);

  for (double shift : {-700.0, -3.0, 5.0, 600.0}) {
    const auto [p0, q0] = class_posterior_from_logs(-1.2, 0.4, std::log(0.3), std::log(0.7));
    const auto [p1, q1] = class_posterior_from_logs(-1.2, 0.4, std::log(0.3) + shift, std::log(0.7) + shift);
    CHECK(std::abs(p0 - p1) <= 1e-12);
    CHECK(std::abs(q0 - q1) <= 1e-12);
  }
  const auto [pbig, qbig] = class_posterior_from_logs(-2000.0, -2001.0, 0.0, 0.0);
  CHECK(pbig == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(qbig > 0.0);
  CHECK_THROWS_AS(class_posterior_from_logs(-INFINITY, -INFINITY, 0.0, 0.0), DegenerateInputError);
  CHECK_THROWS_AS(ClassConditionalFlows(a, b, 1.0), DomainError);
}

TEST_CASE("beta_field_from_flows") {
  std::mt19937_64 rng(10);
  const std::size_t h = 4, w = 5, dim = 3;
  const auto feats = random_vector(rng, h * w * dim, 2.0);
  LabeledGrid grid(h, w, dim, feats, std::vector<std::uint8_t>(h * w, 1));

  FlowModel a(dim, 3, 8, 1);
  a.randomize(4, 0.3);
  const auto same = beta_field_from_flows(ClassConditionalFlows(a, a), grid, BetaMode::kSoftplusLogit);
  CHECK(same.height() == h);
  CHECK(same.width() == w);
  for (const auto& p : same.cells()) {
    CHECK(p.alpha == p.beta);
    CHECK(expected_inlier(p) == 0.5);
  }

  FlowModel b(dim, 3, 8, 2);
  b.randomize(5, 0.3);
  ClassConditionalFlows flows(a, b);
  for (BetaMode mode : {BetaMode::kSoftplusLogit, BetaMode::kContextual}) {
    const auto field = beta_field_from_flows(flows, grid, mode);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto expect = beta_from_mode(mode, a.log_prob(grid.feature(i)), b.log_prob(grid.feature(i)));
      CHECK(field[i].alpha == expect.alpha);
      CHECK(field[i].beta == expect.beta);
      CHECK(field[i].alpha >= 1.0);
      CHECK(field[i].beta >= 1.0);
    }
  }

  LabeledGrid wrong(1, 1, 2, {0.0, 0.0}, {1});
  CHECK_THROWS_AS(beta_field_from_flows(flows, wrong, BetaMode::kSoftplusLogit), ShapeError);
}
