#pragma once

#include <cstdint>
#include <vector>

namespace fepn::autodiff {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape
/// is alive and not cleared.
class Var {
 public:
  Var() = default;
  double value() const;
  std::uint32_t index() const noexcept { return index_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

/// Ordered record of scalar primitive applications. Each node stores its
/// value and the local partials w.r.t. at most two parents; gradient()
/// replays the record backwards.
class Tape {
 public:
  Var variable(double value);
  Var constant(double value) { return variable(value); }

  /// Generic unary / binary node with caller-supplied local partials.
  Var unary(Var a, double value, double da);
  Var binary(Var a, Var b, double value, double da, double db);

  /// d(output)/d(node) for every node recorded so far.
  std::vector<double> gradient(Var output) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() noexcept { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  double value(Var v) const { return nodes_[v.index_].value; }

 private:
  struct Node {
    double value;
    double partial[2];
    std::uint32_t parent[2];
    std::uint8_t arity;
  };
  std::vector<Node> nodes_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);

Var log(Var a);
Var exp(Var a);
Var softplus(Var a);
Var digamma(Var a);
Var log_gamma(Var a);
/// min(max(a, lo), hi); zero gradient outside the interval.
Var clamp(Var a, double lo, double hi);
/// max(a, lo)
Var floor_at(Var a, double lo);

/// Beta variance / differential entropy as fused two-input primitives
/// whose partials come from the closed-form derivatives.
Var beta_variance(Var alpha, Var beta);
Var beta_diff_entropy(Var alpha, Var beta);

}  // namespace fepn::autodiff
