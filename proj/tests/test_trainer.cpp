#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fepn/errors.hpp"
#include "fepn/evaluation.hpp"
#include "fepn/trainer.hpp"

using namespace fepn;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.steps = 40;
  cfg.grid_height = cfg.grid_width = 16;
  cfg.hidden = 8;
  cfg.seed = 3;
  return cfg;
}

double mean_free_energy(const FlowModel& flow, const LabeledGrid& g, std::uint8_t label) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.label(i) != label) continue;
    sum += flow.free_energy(g.feature(i));
    ++n;
  }
  return sum / static_cast<double>(n);
}

double masked_variance(const PosteriorModel& m, const LabeledGrid& g) {
  const auto field = beta_field_from_flows(m.flows, g, BetaMode::kSoftplusLogit);
  return masked_mean(variance_score(field), g, 1);
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  std::vector<double> p{1.0, -2.0};
  AdamState s(2);
  s.m = {0.5, -0.5};
  s.v = {0.25, 0.25};
  const std::vector<double> g{0.0, 0.0};
  AdamHyper h;
  h.learning_rate = 0.0 + 1e-12;
  adam_step(p, g, s, h);
  CHECK(s.m[0] == doctest::Approx(0.45));
  CHECK(s.v[0] == doctest::Approx(0.25 * 0.999));
  std::vector<double> q{1.0, -2.0};
  AdamState fresh(2);
  adam_step(q, g, fresh, AdamHyper{});
  CHECK(q == std::vector<double>{1.0, -2.0});
  CHECK(fresh.m == std::vector<double>{0.0, 0.0});
  CHECK(fresh.t == 1);
}

TEST_CASE("adam: first step is a unit step") {
  std::vector<double> p{0.0};
  AdamState s(1);
  AdamHyper h;
  h.learning_rate = 0.1;
  adam_step(p, std::vector<double>{1.0}, s, h);
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-7));
}

TEST_CASE("adam: minimizes x^2") {
  std::vector<double> x{1.0};
  AdamState s(1);
  AdamHyper h;
  h.learning_rate = 0.1;
  for (int i = 0; i < 100; ++i) adam_step(x, std::vector<double>{2.0 * x[0]}, s, h);
  CHECK(std::abs(x[0]) < 0.05);
  CHECK_THROWS_AS(adam_step(x, std::vector<double>{1.0, 2.0}, s, h), ShapeError);
}

TEST_CASE("config validation") {
  auto cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = small_config();
  cfg.adam.beta1 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = small_config();
  cfg.adam.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = small_config();
  cfg.outlier_fraction = 2.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = small_config();
  cfg.prior_in = 1.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
}

TEST_CASE("zero steps return the initialization") {
  auto cfg = small_config();
  cfg.steps = 0;
  const auto init = initial_model(cfg);
  std::vector<LossRecord> history;
  const auto flows = fit_flows(cfg, init.flows, training_scenes(cfg, kDensityStream), &history);
  CHECK(flows == init.flows);
  CHECK(fit_buce(cfg, init, training_scenes(cfg, kBuceStream), &history) == init);
  CHECK(history.empty());
  for (const auto& b : init.flows.flow_in.blocks()) {
    for (double w : b.scale_net().w2) CHECK(w == 0.0);
    for (double w : b.shift_net().w2) CHECK(w == 0.0);
  }
}

TEST_CASE("density phase separates inliers from outliers") {
  auto cfg = small_config();
  cfg.steps = 150;
  cfg.grid_height = cfg.grid_width = 32;
  cfg.adam.learning_rate = 3e-3;
  const auto init = initial_model(cfg);
  std::vector<LossRecord> history;
  const auto flows = fit_flows(cfg, init.flows, training_scenes(cfg, kDensityStream), &history);
  CHECK(history.back().loss.total < history.front().loss.total);
  const FrozenBackbone bb(cfg.seed, cfg.feature_dim);
  EvalConfig ev;
  ev.seed = cfg.seed;
  const auto test = eval_scene(bb, ev, 0);
  CHECK(mean_free_energy(flows.flow_in, test, 1) < mean_free_energy(flows.flow_in, test, 0));
}

TEST_CASE("BUCE phase raises masked-region variance") {
  TrainConfig cfg;
  cfg.steps = 800;
  const auto init = initial_model(cfg);
  const PosteriorModel density{fit_flows(cfg, init.flows, training_scenes(cfg, kDensityStream)), init.head};
  auto buce_cfg = cfg;
  buce_cfg.steps = 150;
  const auto tuned = fit_buce(buce_cfg, density, training_scenes(buce_cfg, kBuceStream));
  const auto test = eval_scene(FrozenBackbone(cfg.seed, cfg.feature_dim), EvalConfig{}, 0);
  const double before = masked_variance(density, test);
  const double after = masked_variance(tuned, test);
  INFO("masked variance ", before, " -> ", after);
  CHECK(before < 0.082);
  CHECK(after > before);
}

TEST_CASE("identical configs give bit-identical histories") {
  const auto cfg = small_config();
  const auto a = train(cfg);
  const auto b = train(cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    REQUIRE(a.history[i].loss.total == b.history[i].loss.total);
    REQUIRE(a.history[i].loss.var == b.history[i].loss.var);
  }
  CHECK(a.model == b.model);
  std::ostringstream sa, sb;
  write_loss_csv(sa, a.history);
  write_loss_csv(sb, b.history);
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().rfind(std::string(kLossCsvHeader) + "\n0,", 0) == 0);
}

TEST_CASE("training never touches the frozen backbone") {
  const auto cfg = small_config();
  const FrozenBackbone before(cfg.seed, cfg.feature_dim);
  const auto checksum = before.checksum();
  const auto scenes = training_scenes(cfg, kDensityStream);
  train(cfg);
  CHECK(FrozenBackbone(cfg.seed, cfg.feature_dim).checksum() == checksum);
  CHECK(before.checksum() == checksum);
}

TEST_CASE("gradient-path switch") {
  auto cfg = small_config();
  cfg.loss.lambda1 = 0.0;
  cfg.loss.lambda2 = 0.0;
  cfg.loss.out_mode = OutMode::kLiteral;
  auto start = initial_model(cfg);
  start.flows.flow_in.randomize(5, 0.1);
  start.flows.flow_out.randomize(6, 0.1);
  std::size_t observed = 0;
  const auto out = fit_buce(cfg, start, training_scenes(cfg, kBuceStream), nullptr, 0,
                            [&](std::size_t, const LossBreakdown&, const ModelGradients& g) {
                              ++observed;
                              for (double v : g.flow_in) REQUIRE(v == 0.0);
                              for (double v : g.flow_out) REQUIRE(v == 0.0);
                            });
  CHECK(observed == cfg.steps);
  CHECK(out.flows == start.flows);
  CHECK(out.head != start.head);

  cfg.loss.out_mode = OutMode::kHinge;
  cfg.loss.out_enabled = false;
  CHECK(fit_buce(cfg, start, training_scenes(cfg, kBuceStream)).flows == start.flows);
}

TEST_CASE("frozen flows during BUCE only move the head") {
  auto cfg = small_config();
  cfg.train_flows_in_buce = false;
  const auto start = initial_model(cfg);
  const auto out = fit_buce(cfg, start, training_scenes(cfg, kBuceStream));
  CHECK(out.flows == start.flows);
  CHECK(out.head != start.head);
}

TEST_CASE("joint-from-scratch skips the density phase") {
  auto cfg = small_config();
  cfg.joint_from_scratch = true;
  const auto r = train(cfg);
  CHECK(r.history.size() == cfg.steps);
  CHECK(r.density_only == initial_model(cfg));
}

TEST_CASE("divergence raises a training error with the step") {
  auto cfg = small_config();
  cfg.adam.learning_rate = 1e300;
  try {
    train(cfg);
    FAIL("expected a TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.step() < 2 * cfg.steps);
    CHECK(!e.term().empty());
  }
}

TEST_CASE("training scenes are keyed by seed, stream and step") {
  const auto cfg = small_config();
  const auto a = training_scenes(cfg, kDensityStream);
  const auto b = training_scenes(cfg, kDensityStream);
  CHECK(a(5) == b(5));
  CHECK(a(5) != a(6));
  CHECK(a(5) != training_scenes(cfg, kBuceStream)(5));
  auto clean = cfg;
  clean.feature_noise = 0.0;
  const auto raw = training_scenes(clean, kDensityStream)(0);
  for (double f : raw.features()) REQUIRE(f >= 0.0);
}
