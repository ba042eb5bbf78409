#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fepn {

/// Linear map from backbone features to two logits, index 0 = inlier,
/// index 1 = outlier. Stands in for the residual (RPL) branch.
class ResidualHead {
 public:
  ResidualHead() = default;
  explicit ResidualHead(std::size_t dim) : dim_(dim), params_(2 * dim + 2, 0.0) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t param_count() const noexcept { return params_.size(); }
  const std::vector<double>& params() const noexcept { return params_; }
  std::vector<double>& params() noexcept { return params_; }

  std::array<double, 2> logits(std::span<const double> feature) const;

  /// Accumulate d(g . logits)/d(params) into grad.
  void backward(std::span<const double> feature, const std::array<double, 2>& g,
                std::span<double> grad) const;

  bool operator==(const ResidualHead&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> params_;  // w (2 x dim, row-major), then bias (2)
};

/// Numerically stable softmax of two logits.
std::array<double, 2> softmax2(const std::array<double, 2>& logits);

}  // namespace fepn
