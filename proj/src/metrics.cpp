#include "fepn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include "fepn/beta_posterior.hpp"
#include "fepn/errors.hpp"
#include "fepn/losses.hpp"

namespace fepn {
namespace {

struct Counts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

Counts check_binary(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  require_shape(scores.size() == labels.size(), "metrics: scores and labels differ in length");
  Counts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw DomainError("metrics: labels must be binary");
    if (!std::isfinite(scores[i])) throw DomainError("metrics: non-finite score");
    (labels[i] == 1 ? c.pos : c.neg)++;
  }
  if (c.pos == 0 || c.neg == 0) {
    throw DegenerateInputError("metrics: need at least one positive and one negative");
  }
  return c;
}

// Tie groups in descending score order, with per-group positive/negative counts.
struct Group {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

std::vector<Group> descending_groups(std::span<const double> scores,
                                     std::span<const std::uint8_t> labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<Group> groups;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k == 0 || scores[order[k]] != scores[order[k - 1]]) groups.emplace_back();
    (labels[order[k]] == 1 ? groups.back().pos : groups.back().neg)++;
  }
  return groups;
}

}  // namespace

ScoreField::ScoreField(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  require_shape(values_.size() == height * width, "ScoreField: value count != H*W");
  for (double v : values_) {
    if (!std::isfinite(v)) throw DomainError("ScoreField: non-finite score");
  }
}

void ScoreField::write_csv(std::ostream& os) const {
  os << "row,col,score\n" << std::setprecision(17);
  for (std::size_t r = 0; r < height_; ++r) {
    for (std::size_t c = 0; c < width_; ++c) os << r << ',' << c << ',' << values_[r * width_ + c] << '\n';
  }
}

std::vector<std::uint8_t> ScoreField::to_gray() const {
  std::vector<std::uint8_t> gray(values_.size(), 0);
  if (values_.empty()) return gray;
  const auto [lo_it, hi_it] = std::minmax_element(values_.begin(), values_.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (!(range > 0.0)) return gray;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    gray[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values_[i] - lo) / range));
  }
  return gray;
}

void ScoreField::write_pgm(std::ostream& os) const {
  os << "P5\n" << width_ << ' ' << height_ << "\n255\n";
  const auto gray = to_gray();
  os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

double shannon_entropy(std::span<const double> prob) {
  double sum = 0.0;
  for (double p : prob) {
    if (!(p >= 0.0)) throw DomainError("shannon_entropy: negative or NaN probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw DomainError("shannon_entropy: probabilities do not sum to 1");
  double h = 0.0;
  for (double p : prob) h -= p * std::log(std::max(p, kProbFloor));
  return h;
}

ScoreField shannon_entropy_score(std::size_t height, std::size_t width,
                                 std::span<const std::array<double, 2>> probs) {
  std::vector<double> v(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) v[i] = shannon_entropy(probs[i]);
  return ScoreField(height, width, std::move(v));
}

double energy(std::span<const double> logits) {
  if (logits.empty()) throw DomainError("energy: empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(m)) throw DomainError("energy: non-finite logit");
  double s = 0.0;
  for (double l : logits) s += std::exp(l - m);
  return -(m + std::log(s));
}

ScoreField energy_score(std::size_t height, std::size_t width,
                        std::span<const std::array<double, 2>> logits) {
  std::vector<double> v(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) v[i] = energy(logits[i]);
  return ScoreField(height, width, std::move(v));
}

ScoreField variance_score(const BetaField& field) {
  std::vector<double> v(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) v[i] = beta_variance(field[i]);
  return ScoreField(field.height(), field.width(), std::move(v));
}

ScoreField diff_entropy_score(const BetaField& field) {
  std::vector<double> v(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) v[i] = beta_diff_entropy(field[i]);
  return ScoreField(field.height(), field.width(), std::move(v));
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const Counts c = check_binary(scores, labels);
  // Twice the Mann-Whitney count: each (pos, neg) pair with pos above
  // contributes 2, a tie contributes 1.
  std::uint64_t twice = 0;
  std::uint64_t neg_below = c.neg;
  for (const auto& g : descending_groups(scores, labels)) {
    neg_below -= g.neg;
    twice += g.pos * (2 * neg_below + g.neg);
  }
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(c.pos) * static_cast<double>(c.neg));
}

double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const Counts c = check_binary(scores, labels);
  double area = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (const auto& g : descending_groups(scores, labels)) {
    const std::size_t prev_tp = tp;
    tp += g.pos;
    fp += g.neg;
    if (tp == prev_tp) continue;
    const double recall_step = static_cast<double>(tp - prev_tp) / static_cast<double>(c.pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += recall_step * precision;
  }
  return area;
}

double fpr_at_tpr(std::span<const double> scores, std::span<const std::uint8_t> labels,
                  double tpr_target) {
  const Counts c = check_binary(scores, labels);
  if (!(tpr_target >= 0.0 && tpr_target <= 1.0)) throw DomainError("fpr_at_tpr: target outside [0, 1]");
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (const auto& g : descending_groups(scores, labels)) {
    tp += g.pos;
    fp += g.neg;
    if (static_cast<double>(tp) / static_cast<double>(c.pos) >= tpr_target) break;
  }
  return static_cast<double>(fp) / static_cast<double>(c.neg);
}

MetricsReport evaluate_scores(const std::string& method, std::span<const double> scores,
                              std::span<const std::uint8_t> labels) {
  const Counts c = check_binary(scores, labels);
  return MetricsReport{method, fpr_at_tpr(scores, labels), auroc(scores, labels),
                       auprc(scores, labels), c.pos, c.neg};
}

void write_metrics_csv(std::ostream& os, std::span<const MetricsReport> reports) {
  os << kMetricsCsvHeader << '\n' << std::setprecision(17);
  for (const auto& r : reports) {
    os << r.method << ',' << r.fpr95 << ',' << r.auroc << ',' << r.auprc << ',' << r.n_pos << ','
       << r.n_neg << '\n';
  }
}

}  // namespace fepn
