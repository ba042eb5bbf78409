#include "fepn/residual_head.hpp"

#include <algorithm>
#include <cmath>

#include "fepn/errors.hpp"

namespace fepn {

std::array<double, 2> ResidualHead::logits(std::span<const double> feature) const {
  require_shape(feature.size() == dim_, "ResidualHead: feature dimension mismatch");
  std::array<double, 2> out{params_[2 * dim_], params_[2 * dim_ + 1]};
  for (std::size_t k = 0; k < 2; ++k) {
    const double* row = params_.data() + k * dim_;
    for (std::size_t d = 0; d < dim_; ++d) out[k] += row[d] * feature[d];
  }
  return out;
}

void ResidualHead::backward(std::span<const double> feature, const std::array<double, 2>& g,
                            std::span<double> grad) const {
  require_shape(grad.size() == params_.size(), "ResidualHead: gradient size mismatch");
  for (std::size_t k = 0; k < 2; ++k) {
    double* row = grad.data() + k * dim_;
    for (std::size_t d = 0; d < dim_; ++d) row[d] += g[k] * feature[d];
    grad[2 * dim_ + k] += g[k];
  }
}

std::array<double, 2> softmax2(const std::array<double, 2>& logits) {
  const double m = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - m);
  const double e1 = std::exp(logits[1] - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

}  // namespace fepn
