#pragma once

// Configuration-driven experiment runner behind the `scalevec` tool.
//
// Config files are flat text, one `key = value` per line, `#` starts a
// comment. Keys are listed in config_keys(). Experiment seeds derive from the
// master seed as seed + index, with indices in experiment_names() order.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "scalevec/flow.hpp"
#include "scalevec/nnblock.hpp"
#include "scalevec/sde.hpp"

namespace scalevec {

struct ExperimentConfig {
  std::string experiment;  ///< required
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  bool plot = false;

  // thm1: random unit-Frobenius teacher
  std::size_t thm1_c = 4;
  std::size_t thm1_d = 8;
  double thm1_horizon = 5.0;
  std::size_t thm1_steps = 5000;

  // dp: matching-support teacher diag(1, 2), scalar oracles, early cubic on I_2
  double dp_horizon = 5.0;
  std::size_t dp_steps = 5000;
  std::size_t dp_identity_points = 1000;

  // or: balanced teacher, theta-ODE oracles, early cubic
  std::size_t or_c = 3;
  std::size_t or_d = 4;
  double or_horizon = 5.0;
  std::size_t or_steps = 5000;

  std::size_t cubic_steps = 300;
  double cubic_t_begin = 1e-3;
  double cubic_t_end = 3e-2;

  SdeConfig wd{};  ///< decayed run; the free run sets mu = 0
  double wd_horizon_free = 200.0;
  std::size_t wd_seeds = 256;
  std::size_t wd_windows = 20;

  std::size_t precond_c = 3;
  std::size_t precond_d = 4;
  std::size_t precond_states = 100;
  std::size_t sharpness_states = 100;

  BlockConfig block{};           ///< shape of the training task
  BlockConfig gradcheck_shape{}; ///< small shape for finite differences
  TrainConfig train{};
  std::size_t block_seeds = 5;
  std::size_t block_min_wins = 4;
  std::string block_baseline = "standard";
  std::string block_variant = "hg+dnp+or";

  FlowTolerances flow_tol{};
  double tol_cubic_relative = 0.1;
  double tol_identity = 1e-10;
  double tol_gradcheck = 1e-5;
  double tol_absorb = 1e-12;
  double tol_sharpness = 1e-8;

  ExperimentConfig();
};

/// thm1, dp, or, wd-sde, precond, block; "all" runs each in this order.
const std::vector<std::string>& experiment_names();
/// Recognized config keys, in documentation order.
std::vector<std::string> config_keys();

/// Throws ConfigError on syntax errors, unknown or repeated keys, bad values,
/// a missing or unknown experiment, or non-positive tolerances.
ExperimentConfig parse_config(std::istream& in);
/// parse_config on a file; IoError if it cannot be read.
ExperimentConfig load_config(const std::filesystem::path& path);

struct RunResult {
  std::string experiment;
  std::vector<Check> checks;
  std::vector<std::filesystem::path> artifacts;

  bool passed() const;
};

/// Runs the configured experiment(s), writing CSVs (and SVGs when plot is
/// set) under out_dir.
std::vector<RunResult> run(const ExperimentConfig& config);

/// 0 if every check passes, 1 otherwise.
int exit_status(const std::vector<RunResult>& results);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Shortest form that parses back to the same double (17 significant digits).
std::string format_double(double x);

/// Header, then rows; every line newline-terminated. IoError on failure.
std::filesystem::path emit_csv(const CsvTable& table, const std::filesystem::path& path);
/// Plain comma split, no quoting (the emitted files never need it).
CsvTable read_csv(const std::filesystem::path& path);

struct SvgSeries {
  std::string label;
  Vector x;
  Vector y;
};
/// Self-contained polyline chart; log10 y axis when log_y (non-positive
/// values are dropped).
void emit_svg(const std::vector<SvgSeries>& series, const std::string& title, bool log_y,
              const std::filesystem::path& path);

}  // namespace scalevec
