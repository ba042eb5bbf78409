#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fepn/beta_posterior.hpp"
#include "fepn/losses.hpp"
#include "fepn/metrics.hpp"
#include "fepn/synth_data.hpp"

namespace fepn {

/// Every score map the detector produces for one scene.
struct SceneScores {
  BetaField field;
  ScoreField shannon_entropy;
  ScoreField energy;
  ScoreField variance;
  ScoreField diff_entropy;

  const ScoreField& by_method(const std::string& method) const;
};

inline const std::vector<std::string>& score_methods() {
  static const std::vector<std::string> kMethods = {"shannon_entropy", "energy", "variance",
                                                    "diff_entropy"};
  return kMethods;
}

SceneScores score_scene(const PosteriorModel& model, const LabeledGrid& grid, BetaMode mode);

struct EvalConfig {
  std::uint64_t seed = 0;
  std::size_t scenes = 4;
  std::size_t grid_height = 64;
  std::size_t grid_width = 64;
  double outlier_fraction = 0.25;
  BetaMode beta_mode = BetaMode::kSoftplusLogit;
};

/// k-th held-out scene; drawn from a stream disjoint from the training scenes.
LabeledGrid eval_scene(const FrozenBackbone& backbone, const EvalConfig& cfg, std::size_t k);

/// Metrics of every score method pooled over all held-out scenes
/// (positives are OoD cells).
std::vector<MetricsReport> evaluate_model(const PosteriorModel& model,
                                          const FrozenBackbone& backbone, const EvalConfig& cfg);

/// Mean of `scores` over cells with mask == which (1 = OoD).
double masked_mean(const ScoreField& scores, const LabeledGrid& grid, std::uint8_t which);

}  // namespace fepn
