#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fepn/evaluation.hpp"
#include "fepn/trainer.hpp"

namespace fepn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;

/// Invalid configuration or command-line input.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  TrainConfig train;
  std::size_t eval_scenes = 4;
  std::filesystem::path out_dir = "out";
  /// Empty means out_dir / "model.ckpt".
  std::filesystem::path checkpoint;
  /// Export formats for score-grid: any of "csv", "pgm".
  std::vector<std::string> formats = {"csv", "pgm"};
  std::size_t grad_check_size = 8;
  double grad_check_step = 1e-5;

  std::filesystem::path checkpoint_path() const;
  EvalConfig eval_config() const;
  void validate() const;  // throws ConfigError
};

/// Overlay the keys of a JSON object onto `base`. Unknown keys, wrong types
/// and malformed JSON raise ConfigError.
RunConfig parse_run_config(std::string_view json_text, RunConfig base = {});

/// Every key accepted by parse_run_config, with its current value.
std::string to_json(const RunConfig& cfg);

/// Entry point of the `fepn` tool; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace fepn::cli
