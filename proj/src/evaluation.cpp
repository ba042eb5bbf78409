#include "fepn/evaluation.hpp"

#include "fepn/errors.hpp"
#include "fepn/residual_head.hpp"
#include "fepn/trainer.hpp"

namespace fepn {

const ScoreField& SceneScores::by_method(const std::string& method) const {
  if (method == "shannon_entropy") return shannon_entropy;
  if (method == "energy") return energy;
  if (method == "variance") return variance;
  if (method == "diff_entropy") return diff_entropy;
  throw DomainError("unknown score method: " + method);
}

SceneScores score_scene(const PosteriorModel& model, const LabeledGrid& grid, BetaMode mode) {
  require_shape(grid.dim() == model.flows.flow_in.dim(),
                "score_scene: grid feature dim does not match the checkpoint");
  BetaField field = beta_field_from_flows(model.flows, grid, mode);
  std::vector<std::array<double, 2>> logits(grid.size());
  std::vector<std::array<double, 2>> probs(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    logits[i] = model.head.logits(grid.feature(i));
    probs[i] = softmax2(logits[i]);
  }
  const std::size_t h = grid.height();
  const std::size_t w = grid.width();
  auto se = shannon_entropy_score(h, w, probs);
  auto en = energy_score(h, w, logits);
  auto var = variance_score(field);
  auto de = diff_entropy_score(field);
  return SceneScores{std::move(field), std::move(se), std::move(en), std::move(var), std::move(de)};
}

LabeledGrid eval_scene(const FrozenBackbone& backbone, const EvalConfig& cfg, std::size_t k) {
  return backbone.embed(mix_scene(cfg.grid_height, cfg.grid_width, cfg.outlier_fraction,
                                  derive_seed(cfg.seed, kEvalStream, k)));
}

std::vector<MetricsReport> evaluate_model(const PosteriorModel& model,
                                          const FrozenBackbone& backbone, const EvalConfig& cfg) {
  if (cfg.scenes == 0) throw DomainError("evaluate_model: need at least one scene");
  const auto& methods = score_methods();
  std::vector<std::vector<double>> pooled(methods.size());
  std::vector<std::uint8_t> labels;
  for (std::size_t k = 0; k < cfg.scenes; ++k) {
    const auto grid = eval_scene(backbone, cfg, k);
    const auto scores = score_scene(model, grid, cfg.beta_mode);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const auto& v = scores.by_method(methods[m]).values();
      pooled[m].insert(pooled[m].end(), v.begin(), v.end());
    }
    const auto mask = grid.mask();
    labels.insert(labels.end(), mask.begin(), mask.end());
  }
  std::vector<MetricsReport> reports;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    reports.push_back(evaluate_scores(methods[m], pooled[m], labels));
  }
  return reports;
}

double masked_mean(const ScoreField& scores, const LabeledGrid& grid, std::uint8_t which) {
  require_shape(scores.size() == grid.size(), "masked_mean: size mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid.mask(i) == which) {
      sum += scores[i];
      ++n;
    }
  }
  if (n == 0) throw DegenerateInputError("masked_mean: no cells selected");
  return sum / static_cast<double>(n);
}

}  // namespace fepn
