#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fepn {

class BetaField;

/// Row-major H x W raster of finite scores; higher = more anomalous.
class ScoreField {
 public:
  ScoreField(std::size_t height, std::size_t width, std::vector<double> values);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// CSV `row,col,score`, 17 significant digits.
  void write_csv(std::ostream& os) const;
  /// Binary 8-bit PGM (P5, maxval 255), min-max normalized; a constant
  /// field maps to all zeros.
  void write_pgm(std::ostream& os) const;
  std::vector<std::uint8_t> to_gray() const;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> values_;
};

/// -sum p ln p per cell; each probability vector must sum to 1 (1e-6).
ScoreField shannon_entropy_score(std::size_t height, std::size_t width,
                                 std::span<const std::array<double, 2>> probs);
double shannon_entropy(std::span<const double> prob);

/// -log sum_c exp(logit_c) per cell.
ScoreField energy_score(std::size_t height, std::size_t width,
                        std::span<const std::array<double, 2>> logits);
double energy(std::span<const double> logits);

ScoreField variance_score(const BetaField& field);
ScoreField diff_entropy_score(const BetaField& field);

/// Labels: 1 = positive (OoD), 0 = negative. All metrics throw
/// DegenerateInputError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);
double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels);
/// Same sweep as auprc; kept under the name used by detection benchmarks.
inline double average_precision(std::span<const double> scores,
                                std::span<const std::uint8_t> labels) {
  return auprc(scores, labels);
}
/// FPR at the first operating point (descending threshold, whole tie groups)
/// where TPR >= tpr_target.
double fpr_at_tpr(std::span<const double> scores, std::span<const std::uint8_t> labels,
                  double tpr_target = 0.95);

struct MetricsReport {
  std::string method;
  double fpr95 = 0.0;
  double auroc = 0.0;
  double auprc = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

MetricsReport evaluate_scores(const std::string& method, std::span<const double> scores,
                              std::span<const std::uint8_t> labels);

inline constexpr const char* kMetricsCsvHeader = "method,fpr95,auroc,auprc,n_pos,n_neg";
void write_metrics_csv(std::ostream& os, std::span<const MetricsReport> reports);

}  // namespace fepn
