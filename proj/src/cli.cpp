#include "fepn/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "fepn/checkpoint.hpp"
#include "fepn/errors.hpp"
#include "fepn/losses.hpp"
#include "fepn/synth_data.hpp"

namespace fepn::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

constexpr double kGradCheckTolerance = 1e-4;

template <typename T>
T get_as(const json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

std::size_t get_count(const json& value, const std::string& key) {
  if (!value.is_number_integer() || value.get<long long>() < 0) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return value.get<std::size_t>();
}

using Setter = std::function<void(const json&, RunConfig&)>;
using Getter = std::function<ordered_json(const RunConfig&)>;

struct Field {
  std::string key;
  Setter set;
  Getter get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = [] {
    std::vector<Field> f;
    auto add_real = [&f](const std::string& key, std::function<double&(RunConfig&)> ref) {
      f.push_back({key,
                   [key, ref](const json& v, RunConfig& c) {
                     if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
                     ref(c) = v.get<double>();
                   },
                   [ref](const RunConfig& c) { return ordered_json(ref(const_cast<RunConfig&>(c))); }});
    };
    auto add_count = [&f](const std::string& key, std::function<std::size_t&(RunConfig&)> ref) {
      f.push_back({key, [key, ref](const json& v, RunConfig& c) { ref(c) = get_count(v, key); },
                   [ref](const RunConfig& c) { return ordered_json(ref(const_cast<RunConfig&>(c))); }});
    };
    auto add_bool = [&f](const std::string& key, std::function<bool&(RunConfig&)> ref) {
      f.push_back({key,
                   [key, ref](const json& v, RunConfig& c) {
                     if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
                     ref(c) = v.get<bool>();
                   },
                   [ref](const RunConfig& c) { return ordered_json(ref(const_cast<RunConfig&>(c))); }});
    };

    f.push_back({"seed",
                 [](const json& v, RunConfig& c) {
                   if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
                     throw ConfigError("config key 'seed' must be a non-negative integer");
                   }
                   c.train.seed = v.get<std::uint64_t>();
                 },
                 [](const RunConfig& c) { return ordered_json(c.train.seed); }});
    add_count("steps", [](RunConfig& c) -> std::size_t& { return c.train.steps; });
    add_real("learning_rate", [](RunConfig& c) -> double& { return c.train.adam.learning_rate; });
    add_real("adam_beta1", [](RunConfig& c) -> double& { return c.train.adam.beta1; });
    add_real("adam_beta2", [](RunConfig& c) -> double& { return c.train.adam.beta2; });
    add_real("adam_epsilon", [](RunConfig& c) -> double& { return c.train.adam.epsilon; });
    add_real("lambda1", [](RunConfig& c) -> double& { return c.train.loss.lambda1; });
    add_real("lambda2", [](RunConfig& c) -> double& { return c.train.loss.lambda2; });
    add_real("lambda_reg", [](RunConfig& c) -> double& { return c.train.loss.lambda_reg; });
    add_real("uce_scale", [](RunConfig& c) -> double& { return c.train.loss.uce_scale; });
    f.push_back({"out_mode",
                 [](const json& v, RunConfig& c) {
                   try {
                     c.train.loss.out_mode = parse_out_mode(get_as<std::string>(v, "out_mode"));
                   } catch (const DomainError& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [](const RunConfig& c) { return ordered_json(to_string(c.train.loss.out_mode)); }});
    add_bool("out_enabled", [](RunConfig& c) -> bool& { return c.train.loss.out_enabled; });
    f.push_back({"beta_mode",
                 [](const json& v, RunConfig& c) {
                   try {
                     c.train.loss.beta_mode = parse_beta_mode(get_as<std::string>(v, "beta_mode"));
                   } catch (const DomainError& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [](const RunConfig& c) { return ordered_json(to_string(c.train.loss.beta_mode)); }});
    add_bool("var_normalized", [](RunConfig& c) -> bool& { return c.train.loss.var_normalized; });
    add_count("grid_height", [](RunConfig& c) -> std::size_t& { return c.train.grid_height; });
    add_count("grid_width", [](RunConfig& c) -> std::size_t& { return c.train.grid_width; });
    add_real("outlier_fraction", [](RunConfig& c) -> double& { return c.train.outlier_fraction; });
    add_count("feature_dim", [](RunConfig& c) -> std::size_t& { return c.train.feature_dim; });
    add_count("blocks", [](RunConfig& c) -> std::size_t& { return c.train.blocks; });
    add_count("hidden", [](RunConfig& c) -> std::size_t& { return c.train.hidden; });
    add_real("prior_in", [](RunConfig& c) -> double& { return c.train.prior_in; });
    add_real("feature_noise", [](RunConfig& c) -> double& { return c.train.feature_noise; });
    add_bool("train_flows_in_buce", [](RunConfig& c) -> bool& { return c.train.train_flows_in_buce; });
    add_bool("joint_from_scratch", [](RunConfig& c) -> bool& { return c.train.joint_from_scratch; });
    add_count("guard_window", [](RunConfig& c) -> std::size_t& { return c.train.guard_window; });
    add_real("guard_tolerance", [](RunConfig& c) -> double& { return c.train.guard_tolerance; });
    add_count("eval_scenes", [](RunConfig& c) -> std::size_t& { return c.eval_scenes; });
    f.push_back({"out_dir",
                 [](const json& v, RunConfig& c) { c.out_dir = get_as<std::string>(v, "out_dir"); },
                 [](const RunConfig& c) { return ordered_json(c.out_dir.string()); }});
    f.push_back({"checkpoint",
                 [](const json& v, RunConfig& c) { c.checkpoint = get_as<std::string>(v, "checkpoint"); },
                 [](const RunConfig& c) { return ordered_json(c.checkpoint.string()); }});
    f.push_back({"formats",
                 [](const json& v, RunConfig& c) {
                   c.formats = get_as<std::vector<std::string>>(v, "formats");
                 },
                 [](const RunConfig& c) { return ordered_json(c.formats); }});
    add_count("grad_check_size", [](RunConfig& c) -> std::size_t& { return c.grad_check_size; });
    add_real("grad_check_step", [](RunConfig& c) -> double& { return c.grad_check_step; });
    return f;
  }();
  return kFields;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw ConfigError("cannot create output directory " + dir.string());
  }
}

template <typename Fn>
void write_file(const fs::path& path, Fn&& body, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw ConfigError("cannot write " + path.string());
  body(os);
  os.flush();
  if (!os) throw ConfigError("write failed for " + path.string());
}

Checkpoint load_matching(const RunConfig& cfg, const fs::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  const auto& flow = ckpt.model.flows.flow_in;
  if (flow.dim() != cfg.train.feature_dim) {
    throw ShapeError("checkpoint feature dimension " + std::to_string(flow.dim()) +
                     " does not match configured feature_dim " +
                     std::to_string(cfg.train.feature_dim));
  }
  return ckpt;
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const auto& t = cfg.train;
  const FrozenBackbone backbone(t.seed, t.feature_dim);
  const LabeledGrid grid =
      backbone.embed(mix_scene(t.grid_height, t.grid_width, t.outlier_fraction, t.seed));
  ensure_dir(cfg.out_dir);
  const fs::path csv = cfg.out_dir / "grid.csv";
  const fs::path meta = cfg.out_dir / "grid.meta.json";
  write_file(csv, [&](std::ostream& os) { grid.write_csv(os); });
  write_file(meta, [&](std::ostream& os) {
    write_metadata(os, SceneMetadata{t.seed, t.outlier_fraction, t.feature_dim});
  });
  out << "wrote " << csv.string() << " (" << grid.size() << " cells, " << grid.outlier_count()
      << " OoD)\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::optional<fs::path>& resume, std::ostream& out) {
  std::optional<Checkpoint> start;
  if (resume) {
    start = load_matching(cfg, *resume);
    const auto& f = start->model.flows.flow_in;
    if (f.block_count() != cfg.train.blocks || f.hidden() != cfg.train.hidden) {
      throw ShapeError("resume checkpoint architecture does not match the configuration");
    }
    if (start->backbone_seed != cfg.train.seed) {
      throw ConfigError("resume checkpoint was trained on backbone seed " +
                        std::to_string(start->backbone_seed) + ", config seed is " +
                        std::to_string(cfg.train.seed));
    }
  }
  ensure_dir(cfg.out_dir);
  const TrainResult result = train(cfg.train, start ? &start->model : nullptr);
  const fs::path ckpt_path = cfg.checkpoint_path();
  if (ckpt_path.has_parent_path()) ensure_dir(ckpt_path.parent_path());
  write_file(ckpt_path, [&](std::ostream& os) { write_checkpoint(os, {result.model, cfg.train.seed}); },
             true);
  write_file(cfg.out_dir / "losses.csv", [&](std::ostream& os) { write_loss_csv(os, result.history); });
  write_file(cfg.out_dir / "config.json", [&](std::ostream& os) { os << to_json(cfg) << '\n'; });
  out << "trained " << result.history.size() << " steps; checkpoint " << ckpt_path.string() << '\n';
  if (!result.history.empty()) {
    out << "final loss " << std::setprecision(6) << result.history.back().loss.total << '\n';
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const Checkpoint ckpt = load_matching(cfg, cfg.checkpoint_path());
  const FrozenBackbone backbone(ckpt.backbone_seed, cfg.train.feature_dim);
  const auto reports = evaluate_model(ckpt.model, backbone, cfg.eval_config());
  ensure_dir(cfg.out_dir);
  const fs::path path = cfg.out_dir / "metrics.csv";
  write_file(path, [&](std::ostream& os) { write_metrics_csv(os, reports); });
  out << std::left << std::setw(16) << "method" << std::setw(10) << "fpr95" << std::setw(10)
      << "auprc" << "auroc\n"
      << std::fixed << std::setprecision(4);
  for (const auto& r : reports) {
    out << std::setw(16) << r.method << std::setw(10) << r.fpr95 << std::setw(10) << r.auprc
        << r.auroc << '\n';
  }
  return kExitOk;
}

int cmd_score_grid(const RunConfig& cfg, std::ostream& out) {
  const Checkpoint ckpt = load_matching(cfg, cfg.checkpoint_path());
  const FrozenBackbone backbone(ckpt.backbone_seed, cfg.train.feature_dim);
  const EvalConfig ec = cfg.eval_config();
  const LabeledGrid scene = eval_scene(backbone, ec, 0);
  const SceneScores scores = score_scene(ckpt.model, scene, ec.beta_mode);
  ensure_dir(cfg.out_dir);
  const bool csv = std::ranges::find(cfg.formats, "csv") != cfg.formats.end();
  const bool pgm = std::ranges::find(cfg.formats, "pgm") != cfg.formats.end();
  for (const auto& method : score_methods()) {
    const ScoreField& field = scores.by_method(method);
    if (csv) write_file(cfg.out_dir / (method + ".csv"), [&](std::ostream& os) { field.write_csv(os); });
    if (pgm) {
      write_file(cfg.out_dir / (method + ".pgm"), [&](std::ostream& os) { field.write_pgm(os); }, true);
    }
  }
  std::vector<double> mask(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) mask[i] = scene.mask(i);
  const ScoreField mask_field(scene.height(), scene.width(), std::move(mask));
  if (pgm) write_file(cfg.out_dir / "mask.pgm", [&](std::ostream& os) { mask_field.write_pgm(os); }, true);
  if (csv) write_file(cfg.out_dir / "mask.csv", [&](std::ostream& os) { mask_field.write_csv(os); });
  out << "wrote " << score_methods().size() << " score maps to " << cfg.out_dir.string() << '\n';
  return kExitOk;
}

int cmd_grad_check(const RunConfig& cfg, bool use_checkpoint, std::ostream& out) {
  TrainConfig t = cfg.train;
  t.grid_height = t.grid_width = cfg.grad_check_size;
  t.feature_noise = 0.0;
  const LabeledGrid grid = training_scenes(t, kBuceStream)(0);
  const PosteriorModel model =
      use_checkpoint ? load_matching(cfg, cfg.checkpoint_path()).model : grad_check_model(t, grid);
  const std::pair<const char*, LossWeights> terms[] = {
      {"ce", LossWeights::only_ce()},       {"uce", LossWeights::only_uce()},
      {"var", LossWeights::only_var()},     {"out", LossWeights::only_out()},
      {"total", LossWeights::from_config(t.loss)}};
  ensure_dir(cfg.out_dir);
  bool ok = true;
  std::ostringstream csv;
  csv << "term,max_rel_error,norm_rel_error,params\n" << std::setprecision(17);
  out << std::left << std::setw(8) << "term" << std::setw(14) << "max_rel_error" << "status\n";
  for (const auto& [name, weights] : terms) {
    const auto r = grad_check(model, grid, t.loss, weights, cfg.grad_check_step);
    const bool pass = r.max_rel_error <= kGradCheckTolerance;
    ok = ok && pass;
    csv << name << ',' << r.max_rel_error << ',' << r.norm_rel_error << ',' << r.params_checked << '\n';
    out << std::setw(8) << name << std::setw(14) << std::scientific << std::setprecision(3)
        << r.max_rel_error << (pass ? "ok" : "FAIL") << '\n';
  }
  write_file(cfg.out_dir / "grad_check.csv", [&](std::ostream& os) { os << csv.str(); });
  return ok ? kExitOk : kExitNumeric;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

fs::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? out_dir / "model.ckpt" : checkpoint;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig ec;
  ec.seed = train.seed;
  ec.scenes = eval_scenes;
  ec.grid_height = train.grid_height;
  ec.grid_width = train.grid_width;
  ec.outlier_fraction = train.outlier_fraction;
  ec.beta_mode = train.loss.beta_mode;
  return ec;
}

void RunConfig::validate() const {
  try {
    train.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (eval_scenes == 0) throw ConfigError("eval_scenes must be > 0");
  if (grad_check_size == 0) throw ConfigError("grad_check_size must be > 0");
  if (!(grad_check_step > 0.0)) throw ConfigError("grad_check_step must be > 0");
  for (const auto& f : formats) {
    if (f != "csv" && f != "pgm") throw ConfigError("unknown export format '" + f + "'");
  }
}

RunConfig parse_run_config(std::string_view json_text, RunConfig base) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    const auto it = std::ranges::find(fields(), key, &Field::key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    it->set(value, base);
  }
  return base;
}

std::string to_json(const RunConfig& cfg) {
  ordered_json j = ordered_json::object();
  for (const auto& f : fields()) j[f.key] = f.get(cfg);
  return j.dump(2);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Free-energy posterior network toy pipeline", "fepn"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Seed (overrides the config)");
  app.add_option("--out", out_dir, "Output directory (overrides the config)");

  auto* gen = app.add_subcommand("gen-data", "Write one mixed scene as CSV plus metadata");
  auto* tr = app.add_subcommand("train", "Fit the flows, then fine-tune with BUCE");
  std::string resume;
  tr->add_option("--resume", resume, "Start the BUCE phase from this checkpoint");
  auto* ev = app.add_subcommand("eval", "Score held-out scenes and write metrics.csv");
  auto* sg = app.add_subcommand("score-grid", "Export per-method score maps (CSV, PGM)");
  auto* gc = app.add_subcommand("grad-check", "Compare analytic and numeric loss gradients");
  std::string checkpoint;
  for (auto* sub : {ev, sg, gc}) sub->add_option("--checkpoint", checkpoint, "Checkpoint file");
  for (auto* sub : {gen, tr, ev, sg, gc}) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = parse_run_config(read_text(config_path));
    if (seed) cfg.train.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    cfg.validate();

    if (gen->parsed()) return cmd_gen_data(cfg, out);
    if (tr->parsed()) {
      return cmd_train(cfg, resume.empty() ? std::nullopt : std::optional<fs::path>(resume), out);
    }
    if (ev->parsed()) return cmd_eval(cfg, out);
    if (sg->parsed()) return cmd_score_grid(cfg, out);
    if (gc->parsed()) return cmd_grad_check(cfg, !checkpoint.empty(), out);
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DegenerateInputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace fepn::cli
