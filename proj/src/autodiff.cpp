#include "fepn/autodiff.hpp"

#include <cassert>
#include <cmath>

#include "fepn/beta_posterior.hpp"
#include "fepn/special_math.hpp"

namespace fepn::autodiff {

double Var::value() const { return tape_->value(*this); }

Var Tape::variable(double value) {
  nodes_.push_back(Node{value, {0.0, 0.0}, {0, 0}, 0});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::unary(Var a, double value, double da) {
  assert(a.tape_ == this);
  nodes_.push_back(Node{value, {da, 0.0}, {a.index_, 0}, 1});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::binary(Var a, Var b, double value, double da, double db) {
  assert(a.tape_ == this && b.tape_ == this);
  nodes_.push_back(Node{value, {da, db}, {a.index_, b.index_}, 2});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

std::vector<double> Tape::gradient(Var output) const {
  std::vector<double> adj(nodes_.size(), 0.0);
  adj[output.index_] = 1.0;
  for (std::size_t i = output.index_ + 1; i-- > 0;) {
    const double g = adj[i];
    if (g == 0.0) continue;
    const Node& n = nodes_[i];
    for (std::uint8_t k = 0; k < n.arity; ++k) adj[n.parent[k]] += n.partial[k] * g;
  }
  return adj;
}

Var operator+(Var a, Var b) { return a.tape()->binary(a, b, a.value() + b.value(), 1.0, 1.0); }
Var operator-(Var a, Var b) { return a.tape()->binary(a, b, a.value() - b.value(), 1.0, -1.0); }
Var operator*(Var a, Var b) {
  return a.tape()->binary(a, b, a.value() * b.value(), b.value(), a.value());
}
Var operator/(Var a, Var b) {
  const double inv = 1.0 / b.value();
  return a.tape()->binary(a, b, a.value() * inv, inv, -a.value() * inv * inv);
}
Var operator-(Var a) { return a.tape()->unary(a, -a.value(), -1.0); }
Var operator+(Var a, double c) { return a.tape()->unary(a, a.value() + c, 1.0); }
Var operator+(double c, Var a) { return a + c; }
Var operator-(Var a, double c) { return a.tape()->unary(a, a.value() - c, 1.0); }
Var operator-(double c, Var a) { return a.tape()->unary(a, c - a.value(), -1.0); }
Var operator*(Var a, double c) { return a.tape()->unary(a, a.value() * c, c); }
Var operator*(double c, Var a) { return a * c; }

Var log(Var a) { return a.tape()->unary(a, std::log(a.value()), 1.0 / a.value()); }
Var exp(Var a) {
  const double e = std::exp(a.value());
  return a.tape()->unary(a, e, e);
}
Var softplus(Var a) {
  return a.tape()->unary(a, special::softplus(a.value()), special::sigmoid(a.value()));
}
Var digamma(Var a) {
  return a.tape()->unary(a, special::digamma(a.value()), special::trigamma(a.value()));
}
Var log_gamma(Var a) {
  return a.tape()->unary(a, special::log_gamma(a.value()), special::digamma(a.value()));
}
Var clamp(Var a, double lo, double hi) {
  const double v = a.value();
  if (v < lo) return a.tape()->unary(a, lo, 0.0);
  if (v > hi) return a.tape()->unary(a, hi, 0.0);
  return a.tape()->unary(a, v, 1.0);
}
Var floor_at(Var a, double lo) {
  const double v = a.value();
  return v < lo ? a.tape()->unary(a, lo, 0.0) : a.tape()->unary(a, v, 1.0);
}

Var beta_variance(Var alpha, Var beta) {
  const BetaParams p{alpha.value(), beta.value()};
  const auto [da, db] = variance_grad(p);
  return alpha.tape()->binary(alpha, beta, fepn::beta_variance(p), da, db);
}

Var beta_diff_entropy(Var alpha, Var beta) {
  const BetaParams p{alpha.value(), beta.value()};
  const auto [da, db] = diff_entropy_grad(p);
  return alpha.tape()->binary(alpha, beta, fepn::beta_diff_entropy(p), da, db);
}

}  // namespace fepn::autodiff
