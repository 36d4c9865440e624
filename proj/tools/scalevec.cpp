// scalevec: run the dynamics experiments from a flat config file.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "scalevec/cli.hpp"
#include "scalevec/error.hpp"

using namespace scalevec;

int main(int argc, char** argv) {
  CLI::App app{"Scale-vector RMSNorm dynamics laboratory"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "run the experiment named in a config file");
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool plot = false;
  run_cmd->add_option("--config", config_path, "flat key = value config file")->required();
  auto* out_opt = run_cmd->add_option("--out-dir", out_dir, "output directory (overrides out_dir)");
  auto* seed_opt = run_cmd->add_option("--seed", seed, "master seed (overrides seed)");
  run_cmd->add_flag("--plot", plot, "also write SVG plots");

  auto* list_cmd = app.add_subcommand("list", "print the available experiments");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (list_cmd->parsed()) {
    for (const auto& name : experiment_names()) std::cout << name << '\n';
    std::cout << "all\n";
    return 0;
  }

  try {
    ExperimentConfig config = load_config(config_path);
    if (*out_opt) config.out_dir = out_dir;
    if (*seed_opt) config.seed = seed;
    if (plot) config.plot = true;
    const std::vector<RunResult> results = run(config);
    for (const RunResult& r : results) {
      for (const Check& c : r.checks) {
        std::printf("%-8s %-40s %s observed=%.6g threshold=%.6g\n", r.experiment.c_str(), c.name.c_str(),
                    c.pass ? "PASS" : "FAIL", c.observed, c.threshold);
      }
    }
    const int status = exit_status(results);
    std::printf("%s\n", status == 0 ? "all checks passed" : "some checks failed");
    return status;
  } catch (const Error& e) {
    std::fprintf(stderr, "scalevec: %s\n", e.what());
    return e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::IoError ? 2 : 1;
  }
}
