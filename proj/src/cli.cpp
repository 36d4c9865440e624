#include "scalevec/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "scalevec/error.hpp"
#include "scalevec/rng.hpp"

namespace scalevec {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw Error(ErrorCode::ConfigError, key + ": '" + v + "' is not a finite number");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(ErrorCode::ConfigError, key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw Error(ErrorCode::ConfigError, key + ": expected true/false, got '" + v + "'");
}

DecayPolicy parse_policy(const std::string& key, const std::string& v) {
  if (v == "matrices") return DecayPolicy::MatricesOnly;
  if (v == "iwd") return DecayPolicy::Iwd;
  if (v == "all") return DecayPolicy::All;
  throw Error(ErrorCode::ConfigError, key + ": expected matrices, iwd or all, got '" + v + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::vector<std::pair<std::string, Setter>>& key_table() {
  static const std::vector<std::pair<std::string, Setter>> table = [] {
    std::vector<std::pair<std::string, Setter>> t;
    auto dbl = [&t](std::string key, double ExperimentConfig::*m) {
      t.emplace_back(key, [m](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.*m = parse_double(k, v);
      });
    };
    auto sz = [&t](std::string key, std::size_t ExperimentConfig::*m) {
      t.emplace_back(key, [m](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.*m = parse_size(k, v);
      });
    };
    auto custom = [&t](std::string key, Setter s) { t.emplace_back(std::move(key), std::move(s)); };

    custom("experiment", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.experiment = v; });
    custom("seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); });
    custom("out_dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; });
    custom("plot", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.plot = parse_bool(k, v); });

    sz("thm1.c", &ExperimentConfig::thm1_c);
    sz("thm1.d", &ExperimentConfig::thm1_d);
    dbl("thm1.horizon", &ExperimentConfig::thm1_horizon);
    sz("thm1.steps", &ExperimentConfig::thm1_steps);
    dbl("dp.horizon", &ExperimentConfig::dp_horizon);
    sz("dp.steps", &ExperimentConfig::dp_steps);
    sz("dp.identity_points", &ExperimentConfig::dp_identity_points);
    sz("or.c", &ExperimentConfig::or_c);
    sz("or.d", &ExperimentConfig::or_d);
    dbl("or.horizon", &ExperimentConfig::or_horizon);
    sz("or.steps", &ExperimentConfig::or_steps);
    sz("cubic.steps", &ExperimentConfig::cubic_steps);
    dbl("cubic.t_begin", &ExperimentConfig::cubic_t_begin);
    dbl("cubic.t_end", &ExperimentConfig::cubic_t_end);

    auto wd = [&t](std::string key, double SdeConfig::*m) {
      t.emplace_back(key, [m](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.wd.*m = parse_double(k, v);
      });
    };
    custom("wd.d", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.wd.d = parse_size(k, v); });
    wd("wd.lambda", &SdeConfig::lambda);
    wd("wd.mu", &SdeConfig::mu);
    wd("wd.q", &SdeConfig::q);
    wd("wd.dt", &SdeConfig::dt);
    wd("wd.horizon", &SdeConfig::horizon);
    dbl("wd.horizon_free", &ExperimentConfig::wd_horizon_free);
    sz("wd.seeds", &ExperimentConfig::wd_seeds);
    sz("wd.windows", &ExperimentConfig::wd_windows);

    sz("precond.c", &ExperimentConfig::precond_c);
    sz("precond.d", &ExperimentConfig::precond_d);
    sz("precond.states", &ExperimentConfig::precond_states);
    sz("sharpness.states", &ExperimentConfig::sharpness_states);

    auto blk = [&t](std::string key, std::size_t BlockConfig::*m) {
      t.emplace_back(key, [m](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.block.*m = parse_size(k, v);
      });
    };
    blk("block.d_model", &BlockConfig::d_model);
    blk("block.n_head", &BlockConfig::n_head);
    blk("block.d_ffn", &BlockConfig::d_ffn);
    custom("block.causal", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.block.causal = parse_bool(k, v);
    });
    custom("block.rms_eps", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.block.rms_eps = parse_double(k, v);
    });
    auto trn = [&t](std::string key, double TrainConfig::*m) {
      t.emplace_back(key, [m](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.train.*m = parse_double(k, v);
      });
    };
    auto trn_sz = [&t](std::string key, std::size_t TrainConfig::*m) {
      t.emplace_back(key, [m](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.train.*m = parse_size(k, v);
      });
    };
    trn_sz("block.steps", &TrainConfig::steps);
    trn_sz("block.batch", &TrainConfig::batch);
    trn_sz("block.seq_len", &TrainConfig::seq_len);
    trn_sz("block.log_every", &TrainConfig::log_every);
    trn("block.lr", &TrainConfig::lr);
    trn("block.weight_decay", &TrainConfig::weight_decay);
    sz("block.seeds", &ExperimentConfig::block_seeds);
    sz("block.min_wins", &ExperimentConfig::block_min_wins);
    custom("block.baseline", [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.block_baseline = v;
    });
    custom("block.variant", [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.block_variant = v;
    });
    custom("block.variant_decay", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.policy = parse_policy(k, v);
    });

    auto tol = [&t](std::string key, double FlowTolerances::*m) {
      t.emplace_back(key, [m](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.flow_tol.*m = parse_double(k, v);
      });
    };
    tol("tol.conservation", &FlowTolerances::conservation);
    tol("tol.closed_form", &FlowTolerances::closed_form_relative);
    tol("tol.oracle", &FlowTolerances::oracle);
    tol("tol.support", &FlowTolerances::support);
    tol("tol.symmetry", &FlowTolerances::symmetry);
    dbl("tol.cubic_relative", &ExperimentConfig::tol_cubic_relative);
    dbl("tol.identity", &ExperimentConfig::tol_identity);
    dbl("tol.gradcheck", &ExperimentConfig::tol_gradcheck);
    dbl("tol.absorb", &ExperimentConfig::tol_absorb);
    dbl("tol.sharpness", &ExperimentConfig::tol_sharpness);
    return t;
  }();
  return table;
}

void validate_config(const ExperimentConfig& c) {
  if (c.experiment.empty()) throw Error(ErrorCode::ConfigError, "missing required key 'experiment'");
  const auto& names = experiment_names();
  if (c.experiment != "all" && std::find(names.begin(), names.end(), c.experiment) == names.end()) {
    throw Error(ErrorCode::ConfigError, "unknown experiment '" + c.experiment + "'");
  }
  const double tols[] = {c.flow_tol.conservation, c.flow_tol.closed_form_relative, c.flow_tol.oracle,
                         c.flow_tol.support,      c.flow_tol.symmetry,             c.tol_cubic_relative,
                         c.tol_identity,          c.tol_gradcheck,                 c.tol_absorb,
                         c.tol_sharpness};
  for (double t : tols)
    if (!(t > 0.0)) throw Error(ErrorCode::ConfigError, "tolerances must be positive");
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw Error(ErrorCode::ConfigError, std::string(what) + " must be positive");
  };
  positive(c.thm1_c, "thm1.c");
  positive(c.thm1_d, "thm1.d");
  positive(c.thm1_steps, "thm1.steps");
  positive(c.dp_steps, "dp.steps");
  positive(c.or_c, "or.c");
  positive(c.or_d, "or.d");
  positive(c.or_steps, "or.steps");
  positive(c.cubic_steps, "cubic.steps");
  positive(c.precond_c, "precond.c");
  positive(c.precond_d, "precond.d");
  positive(c.precond_states, "precond.states");
  positive(c.block_seeds, "block.seeds");
  if (!(c.thm1_horizon > 0.0 && c.dp_horizon > 0.0 && c.or_horizon > 0.0 && c.wd_horizon_free > 0.0 &&
        c.wd.horizon > 0.0)) {
    throw Error(ErrorCode::ConfigError, "horizons must be positive");
  }
  if (!(c.cubic_t_begin > 0.0 && c.cubic_t_end > c.cubic_t_begin)) {
    throw Error(ErrorCode::ConfigError, "cubic window must satisfy 0 < t_begin < t_end");
  }
  if (c.block_min_wins > c.block_seeds) {
    throw Error(ErrorCode::ConfigError, "block.min_wins exceeds block.seeds");
  }
  if (!(c.train.lr > 0.0) || c.train.weight_decay < 0.0) {
    throw Error(ErrorCode::ConfigError, "block.lr must be positive and block.weight_decay non-negative");
  }
  if (c.train.steps == 0 || c.train.batch == 0 || c.train.seq_len == 0 || c.train.log_every == 0) {
    throw Error(ErrorCode::ConfigError, "block training sizes must be positive");
  }
  validate(c.block);
  parse_design(c.block_baseline, c.block);
  parse_design(c.block_variant, c.block);
  SdeConfig decayed = c.wd;
  if (!(decayed.mu > 0.0)) throw Error(ErrorCode::ConfigError, "wd.mu must be positive");
  (void)resolved(decayed);
  if (c.wd_seeds < 16) throw Error(ErrorCode::ConfigError, "wd.seeds must be at least 16");
  if (c.wd_windows < 2) throw Error(ErrorCode::ConfigError, "wd.windows must be at least 2");
}

// ---------------------------------------------------------------- artifacts

using Tables = std::map<std::string, CsvTable>;

CsvTable& table(Tables& t, const std::string& name, std::vector<std::string> header) {
  auto [it, fresh] = t.try_emplace(name);
  if (fresh) it->second.header = std::move(header);
  return it->second;
}

struct Writer {
  const ExperimentConfig& config;
  RunResult& result;
  Tables& tables;

  void svg(const std::vector<SvgSeries>& s, const std::string& title, bool log_y, const std::string& name) {
    if (!config.plot) return;
    const auto path = config.out_dir / name;
    emit_svg(s, title, log_y, path);
    result.artifacts.push_back(path);
  }
};

std::string fmt_u(std::uint64_t v) { return std::to_string(v); }

void append_trajectory_rows(CsvTable& t, const ComparisonReport& r) {
  auto add = [&](const std::string& design, const Vector& loss, const Vector& drift) {
    for (std::size_t k = 0; k < r.times.size(); ++k) {
      t.rows.push_back({r.experiment, design, format_double(r.times[k]), format_double(loss[k]),
                        format_double(drift.empty() ? 0.0 : drift[k])});
    }
  };
  add(r.baseline_label, r.loss_baseline, r.baseline_drift);
  add(r.variant_label, r.loss_variant, r.variant_drift);
}

void append_comparison_rows(CsvTable& t, const ComparisonReport& r) {
  for (std::size_t k = 0; k < r.times.size(); ++k) {
    t.rows.push_back({r.experiment, format_double(r.times[k]), format_double(r.loss_baseline[k]),
                      format_double(r.loss_variant[k]), format_double(r.gap[k])});
  }
}


void add_checks(RunResult& r, const std::vector<Check>& checks, const std::string& prefix = "") {
  for (Check c : checks) {
    if (!prefix.empty()) c.name = prefix + "." + c.name;
    r.checks.push_back(std::move(c));
  }
}

std::vector<SvgSeries> loss_series(const ComparisonReport& r) {
  return {{r.baseline_label, r.times, r.loss_baseline}, {r.variant_label, r.times, r.loss_variant}};
}

void write_flow_artifacts(Writer& w, const std::string& stem, const std::vector<const ComparisonReport*>& reports) {
  CsvTable& traj = table(w.tables, "trajectory.csv", {"experiment", "design", "t", "loss", "conserved_max_drift"});
  CsvTable& comp = table(w.tables, "comparison.csv", {"experiment", "t", "loss_baseline", "loss_variant", "gap"});
  for (const ComparisonReport* r : reports) {
    append_trajectory_rows(traj, *r);
    append_comparison_rows(comp, *r);
  }
  w.svg(loss_series(*reports.front()), stem + " loss", true, stem + "_loss.svg");
}

// ---------------------------------------------------------------- experiments

RunResult run_thm1_experiment(const ExperimentConfig& c, std::uint64_t seed, Tables& tables) {
  RunResult res{"thm1", {}, {}};
  Rng rng(seed);
  const Matrix target = random_unit_teacher(c.thm1_c, c.thm1_d, rng);
  const ComparisonReport r = run_thm1(target, c.thm1_horizon, c.thm1_steps, c.flow_tol);
  add_checks(res, r.checks);
  Writer w{c, res, tables};
  write_flow_artifacts(w, "thm1", {&r});
  return res;
}

RunResult run_dp_experiment(const ExperimentConfig& c, std::uint64_t, Tables& tables) {
  RunResult res{"dp", {}, {}};
  const ComparisonReport r =
      run_dp_matching_support(Matrix::from_rows({{1.0, 0.0}, {0.0, 2.0}}), c.dp_horizon, c.dp_steps, c.flow_tol);
  add_checks(res, r.checks);

  // Identity on a log grid over (1e-6, 10].
  double worst = 0.0;
  const std::size_t n = std::max<std::size_t>(c.dp_identity_points, 2);
  for (std::size_t k = 0; k < n; ++k) {
    const double y = std::pow(10.0, -6.0 + 7.0 * static_cast<double>(k + 1) / static_cast<double>(n));
    const IdentityCheck id = dp_identity_check(y);
    worst = std::max(worst, std::abs(id.lhs - id.rhs) / std::abs(id.rhs));
  }
  res.checks.push_back(check_at_most("identity_relative", worst, c.tol_identity));

  for (double ws : {0.5, 1.0, 2.0}) {
    const ScalarDpOracle o = scalar_dp_oracle(ws, c.dp_horizon, c.dp_steps);
    double lead = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < o.times.size(); ++k) lead = std::min(lead, o.a_phi[k] - o.a_f[k]);
    char name[64];
    std::snprintf(name, sizeof name, "scalar_oracle_lead_w%.1f", ws);
    Check ch{name, lead, 0.0, lead > 0.0};
    res.checks.push_back(ch);
  }

  const CubicWindow window{c.cubic_t_begin, c.cubic_t_end};
  const Matrix eye = Matrix::identity(2);
  ComparisonReport early = early_phase_gap(DesignKind::DP, eye, window, c.cubic_steps);
  early.experiment = "dp-early";
  const double c3 = fit_early_cubic(early.times, early.gap, window);
  const double target3 = dp_cubic_target(eye);
  res.checks.push_back(check_at_most("early_cubic_relative", std::abs(c3 / target3 - 1.0), c.tol_cubic_relative));

  Writer w{c, res, tables};
  write_flow_artifacts(w, "dp", {&r, &early});
  return res;
}

RunResult run_or_experiment(const ExperimentConfig& c, std::uint64_t seed, Tables& tables) {
  RunResult res{"or", {}, {}};
  Rng rng(seed);
  const Matrix target = balanced_teacher(c.or_c, c.or_d, rng);
  const ComparisonReport r = run_thm4(target, c.or_horizon, c.or_steps, c.flow_tol);
  add_checks(res, r.checks);

  const CubicWindow window{c.cubic_t_begin, c.cubic_t_end};
  ComparisonReport early = early_phase_gap(DesignKind::OR, target, window, c.cubic_steps);
  early.experiment = "or-early";
  const double c3 = fit_early_cubic(early.times, early.gap, window);
  res.checks.push_back(
      check_at_most("early_cubic_relative", std::abs(c3 / or_cubic_target(target) - 1.0), c.tol_cubic_relative));

  Writer w{c, res, tables};
  write_flow_artifacts(w, "or", {&r, &early});
  return res;
}

RunResult run_wd_sde_experiment(const ExperimentConfig& c, std::uint64_t seed, Tables& tables) {
  RunResult res{"wd-sde", {}, {}};
  SdeConfig decayed = c.wd;
  SdeConfig free = c.wd;
  free.mu = 0.0;
  free.horizon = c.wd_horizon_free;
  const WdReport r = run_wd_experiment(decayed, free, c.wd_seeds, seed, c.wd_windows);
  add_checks(res, r.checks);

  // Block formulas against the assembled Hessian.
  Rng rng(seed ^ 0x5A5A5A5A5A5A5A5AULL);
  const std::size_t d = resolved(decayed).d;
  double worst = 0.0;
  for (std::size_t n = 0; n < c.sharpness_states; ++n) {
    Vector w(d), g(d), a(d);
    for (std::size_t i = 0; i < d; ++i) {
      w[i] = rng.normal();
      g[i] = rng.normal();
      a[i] = rng.normal();
    }
    const double blocks = hessian_sharpness(w, g, a).lambda_max;
    worst = std::max(worst, std::abs(max_eigenvalue(assemble_hessian(w, g, a)) - blocks));
  }
  res.checks.push_back(check_at_most("sharpness_power_iteration", worst, c.tol_sharpness));
  const SharpnessRecord ex = hessian_sharpness(Vector{0, 0}, Vector{1, 1}, Vector{1, 1});
  auto digits7 = [](double v, double ref) { return std::abs(std::round(v * 1e7) - std::round(ref * 1e7)); };
  const double ex_err =
      std::max({digits7(ex.trace, 2.0), digits7(ex.lambda_max, 1.6180340), digits7(ex.frob, 2.4494897)});
  res.checks.push_back(check_at_most("sharpness_worked_example_7dp", ex_err, 0.0));

  CsvTable& moments =
      table(tables, "sde_moments.csv", {"mu", "t", "e_w2", "e_g2", "e_s_mean", "stderr_w2", "stderr_g2"});
  CsvTable& sharp = table(tables, "sharpness.csv", {"mu", "t", "lambda_max", "trace", "frob"});
  for (const auto* pair : {&r.decayed_moments, &r.free_moments}) {
    const double mu = pair == &r.decayed_moments ? r.decayed.mu : r.free.mu;
    const MomentSeries& m = *pair;
    for (std::size_t k = 0; k < m.times.size(); ++k) {
      moments.rows.push_back({format_double(mu), format_double(m.times[k]), format_double(m.e_w2[k]),
                              format_double(m.e_g2[k]), format_double(m.e_s_mean[k]),
                              format_double(m.stderr_w2[k]), format_double(m.stderr_g2[k])});
      sharp.rows.push_back({format_double(mu), format_double(m.times[k]), format_double(m.lambda_max[k]),
                            format_double(m.trace[k]), format_double(m.frob[k])});
    }
  }
  Writer w{c, res, tables};
  w.svg({{"E|gamma|^2 mu>0", r.decayed_moments.times, r.decayed_moments.e_g2},
         {"Gronwall bound", r.decayed_moments.times, r.gamma_bound},
         {"E|gamma|^2 mu=0", r.free_moments.times, r.free_moments.e_g2}},
        "scale-vector second moment", true, "sde_moments.svg");
  w.svg({{"lambda_max mu>0", r.decayed_moments.times, r.decayed_moments.lambda_max},
         {"lambda_max mu=0", r.free_moments.times, r.free_moments.lambda_max}},
        "sharpness", true, "sharpness.svg");
  return res;
}

RunResult run_precond_experiment(const ExperimentConfig& c, std::uint64_t seed, Tables&) {
  RunResult res{"precond", {}, {}};
  add_checks(res, run_preconditioner_suite(c.precond_c, c.precond_d, c.precond_states, seed));
  return res;
}

std::vector<BlockConfig> block_design_lattice(const BlockConfig& base) {
  std::vector<BlockConfig> out;
  for (bool hg : {false, true})
    for (Placement pl : {Placement::Standard, Placement::AP, Placement::DP, Placement::DNP})
      for (Reparam rp : {Reparam::None, Reparam::OR, Reparam::ER}) {
        BlockConfig b = base;
        b.heterogeneous = hg;
        b.placement = pl;
        b.reparam = rp;
        out.push_back(b);
      }
  return out;
}

RunResult run_block_experiment(const ExperimentConfig& c, std::uint64_t seed, Tables& tables) {
  RunResult res{"block", {}, {}};
  CsvTable& grad = table(tables, "gradcheck.csv", {"design", "param_name", "max_rel_err"});
  double worst_grad = 0.0;
  double worst_absorb = 0.0;
  Rng rng(seed);
  for (const BlockConfig& design : block_design_lattice(c.gradcheck_shape)) {
    BlockParams p = init_params(design, rng);
    randomize_params(p, rng);
    Matrix x(3, design.d_model), up(3, design.d_model);
    for (double& v : x.data()) v = rng.normal();
    for (double& v : up.data()) v = rng.normal();
    for (const GradCheckRow& row : gradient_check(p, x, up)) {
      grad.rows.push_back({design.label(), row.param_name, format_double(row.max_rel_err)});
      worst_grad = std::max(worst_grad, row.max_rel_err);
    }
    worst_absorb = std::max(worst_absorb, max_abs_diff(block_forward(p, x), block_forward(absorb_input_scales(p), x)));
  }
  res.checks.push_back(check_at_most("gradcheck_max_rel_err", worst_grad, c.tol_gradcheck));
  res.checks.push_back(check_at_most("absorption_max_abs_diff", worst_absorb, c.tol_absorb));

  const ParamCount llama = count_params(22, 1792, 2, 1, std::size_t{1'028'065'024});
  res.checks.push_back(check_at_most("llama_scale_count_error",
                                     std::abs(static_cast<double>(llama.scale_count) - 80640.0), 0.0));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", *llama.ratio);
  const double rounded = std::strtod(buf, nullptr);
  res.checks.push_back(check_at_most("llama_ratio_3sig_error", std::abs(rounded - 7.84e-5), 1e-12));

  const BlockParams teacher = make_teacher(c.block, seed + 1'000'003ULL);
  const BlockConfig base = parse_design(c.block_baseline, c.block);
  const BlockConfig variant = parse_design(c.block_variant, c.block);
  TrainConfig base_train = c.train;
  base_train.policy = DecayPolicy::MatricesOnly;
  CsvTable& train = table(tables, "block_train.csv", {"design", "seed", "step", "loss"});
  std::size_t wins = 0;
  std::vector<SvgSeries> curves;
  for (std::size_t s = 0; s < c.block_seeds; ++s) {
    const std::uint64_t ts = seed + s;
    const TrainCurve a = train_toy(base, teacher, base_train, ts);
    const TrainCurve b = train_toy(variant, teacher, c.train, ts);
    for (const TrainCurve* cv : {&a, &b}) {
      for (std::size_t k = 0; k < cv->steps.size(); ++k) {
        train.rows.push_back({cv->design, fmt_u(cv->seed), fmt_u(cv->steps[k]), format_double(cv->losses[k])});
      }
      if (s == 0) {
        Vector xs(cv->steps.begin(), cv->steps.end());
        curves.push_back({cv->design, xs, cv->losses});
      }
    }
    if (b.final_loss <= a.final_loss) ++wins;
  }
  res.checks.push_back(check_at_least("variant_wins", static_cast<double>(wins),
                                      static_cast<double>(c.block_min_wins)));

  Writer w{c, res, tables};
  w.svg(curves, "block training loss (first seed)", true, "block_train.svg");
  return res;
}

using Runner = RunResult (*)(const ExperimentConfig&, std::uint64_t, Tables&);

constexpr Runner kRunners[] = {run_thm1_experiment, run_dp_experiment,      run_or_experiment,
                               run_wd_sde_experiment, run_precond_experiment, run_block_experiment};

}  // namespace

ExperimentConfig::ExperimentConfig() {
  gradcheck_shape.d_model = 8;
  gradcheck_shape.n_head = 2;
  gradcheck_shape.d_ffn = 12;
  train.policy = DecayPolicy::Iwd;
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"thm1", "dp", "or", "wd-sde", "precond", "block"};
  return names;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : key_table()) out.push_back(k);
  return out;
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": empty key or value");
    }
    if (!seen.insert(key).second) throw Error(ErrorCode::ConfigError, "key '" + key + "' repeated");
    const auto& table = key_table();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == key; });
    if (it == table.end()) throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
    it->second(c, key, value);
  }
  validate_config(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
  return parse_config(f);
}

bool RunResult::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

std::vector<RunResult> run(const ExperimentConfig& config) {
  validate_config(config);
  std::error_code ec;
  std::filesystem::create_directories(config.out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + config.out_dir.string() + ": " + ec.message());
  std::vector<RunResult> out;
  Tables tables;
  const auto& names = experiment_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (config.experiment != "all" && config.experiment != names[i]) continue;
    out.push_back(kRunners[i](config, config.seed + i, tables));
  }
  for (const auto& [name, t] : tables) out.back().artifacts.push_back(emit_csv(t, config.out_dir / name));
  CsvTable summary{{"experiment", "check", "observed", "threshold", "pass"}, {}};
  for (const RunResult& r : out)
    for (const Check& c : r.checks)
      summary.rows.push_back({r.experiment, c.name, format_double(c.observed), format_double(c.threshold),
                              c.pass ? "1" : "0"});
  const auto path = emit_csv(summary, config.out_dir / "checks.csv");
  if (!out.empty()) out.back().artifacts.push_back(path);
  return out;
}

int exit_status(const std::vector<RunResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const RunResult& r) { return r.passed(); }) ? 0 : 1;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::filesystem::path emit_csv(const CsvTable& table, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  auto line = [&f](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) f << ',';
      f << cells[i];
    }
    f << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) {
    if (r.size() != table.header.size()) {
      throw Error(ErrorCode::DimensionMismatch, "row width differs from the header in " + path.string());
    }
    line(r);
  }
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path.string());
  return path;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (first) t.header = std::move(cells);
    else t.rows.push_back(std::move(cells));
    first = false;
  }
  return t;
}

void emit_svg(const std::vector<SvgSeries>& series, const std::string& title, bool log_y,
              const std::filesystem::path& path) {
  constexpr double W = 640, H = 400, L = 70, R = 160, T = 40, B = 50;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  auto ty = [log_y](double y) { return log_y ? std::log10(y) : y; };
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (log_y && !(s.y[k] > 0.0)) continue;
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      xmin = std::min(xmin, s.x[k]);
      xmax = std::max(xmax, s.x[k]);
      ymin = std::min(ymin, ty(s.y[k]));
      ymax = std::max(ymax, ty(s.y[k]));
    }
  if (!(xmax > xmin)) xmax = xmin + 1.0;
  if (!(ymax > ymin)) ymax = ymin + 1.0;
  if (!std::isfinite(xmin)) xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (ty(y) - ymin) / (ymax - ymin) * (H - T - B); };

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  char buf[128];
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << L << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  f << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  std::snprintf(buf, sizeof buf, "%.3g", log_y ? std::pow(10.0, ymax) : ymax);
  f << "<text x=\"4\" y=\"" << T + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.3g", log_y ? std::pow(10.0, ymin) : ymin);
  f << "<text x=\"4\" y=\"" << H - B << "\" font-family=\"sans-serif\" font-size=\"11\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.3g", xmin);
  f << "<text x=\"" << L << "\" y=\"" << H - B + 16 << "\" font-family=\"sans-serif\" font-size=\"11\">" << buf
    << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.3g", xmax);
  f << "<text x=\"" << W - R - 30 << "\" y=\"" << H - B + 16 << "\" font-family=\"sans-serif\" font-size=\"11\">"
    << buf << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = colors[i % 6];
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (log_y && !(s.y[k] > 0.0)) continue;
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(s.x[k]), py(s.y[k]));
      f << buf;
    }
    f << "\"/>\n";
    f << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (i + 1) << "\" font-family=\"sans-serif\" "
      << "font-size=\"11\" fill=\"" << color << "\">" << s.label << "</text>\n";
  }
  f << "</svg>\n";
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace scalevec
