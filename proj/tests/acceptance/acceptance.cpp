// Acceptance suite: one PASS/FAIL line per criterion. With an argument N only
// criterion N runs. Exit status 0 iff every selected criterion passes.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "scalevec/cli.hpp"
#include "scalevec/error.hpp"
#include "scalevec/flow.hpp"
#include "scalevec/nnblock.hpp"
#include "scalevec/rng.hpp"
#include "scalevec/sde.hpp"

using namespace scalevec;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const Check& find(const std::vector<Check>& checks, const std::string& name) {
  for (const Check& c : checks)
    if (c.name == name) return c;
  throw Error(ErrorCode::ConfigError, "missing check " + name);
}

void require_check(Outcome& o, const std::vector<Check>& checks, const std::string& name) {
  const Check& c = find(checks, name);
  o.require(c.pass, name + "=" + num(c.observed));
}

Outcome criterion1() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1);
  const ComparisonReport r = run_thm1(random_unit_teacher(4, 8, rng), 5.0, 5000);
  double min_lead = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < r.times.size(); ++k) min_lead = std::min(min_lead, r.loss_baseline[k] - r.loss_variant[k]);
  o.require(min_lead > 0.0, "min L_g-L_f=" + num(min_lead));
  const Check& cf = find(r.checks, "closed_form_relative");
  o.require(cf.observed < 1e-8, "closed form rel=" + num(cf.observed));
  const Check& cd = find(r.checks, "conservation_drift");
  o.require(cd.observed < 1e-6, "drift=" + num(cd.observed));
  const double s = seconds_since(t0);
  o.require(s < 5.0, "time=" + num(s) + "s");
  return o;
}

Outcome criterion2() {
  Outcome o;
  double worst = 0.0;
  for (int k = 1; k <= 1000; ++k) {
    const double y = std::pow(10.0, -6.0 + 7.0 * k / 1000.0);
    const IdentityCheck id = dp_identity_check(y);
    worst = std::max(worst, std::abs(id.lhs - id.rhs) / std::abs(id.rhs));
  }
  o.require(worst < 1e-10, "identity rel=" + num(worst));
  for (double ws : {0.5, 1.0, 2.0}) {
    const ScalarDpOracle s = scalar_dp_oracle(ws, 5.0, 5000);
    double lead = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < s.times.size(); ++k) lead = std::min(lead, s.a_phi[k] - s.a_f[k]);
    o.require(lead > 0.0, "w*=" + num(ws) + " min lead=" + num(lead));
  }
  return o;
}

Outcome criterion3() {
  Outcome o;
  const ComparisonReport r = run_dp_matching_support(Matrix::from_rows({{1, 0}, {0, 2}}), 5.0, 5000);
  double lead = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < r.times.size(); ++k) lead = std::min(lead, r.loss_baseline[k] - r.loss_variant[k]);
  o.require(lead > 0.0, "min L_f-L_phi=" + num(lead));
  const Check& so = find(r.checks, "scalar_oracle");
  o.require(so.observed < 1e-6, "oracle=" + num(so.observed));
  const Check& sp = find(r.checks, "support_preservation");
  o.require(sp.observed < 1e-12, "support=" + num(sp.observed));
  return o;
}

Outcome criterion4() {
  Outcome o;
  const CubicWindow window{};
  const Matrix eye = Matrix::identity(2);
  const ComparisonReport dp = early_phase_gap(DesignKind::DP, eye, window, 300);
  const double c_dp = fit_early_cubic(dp.times, dp.gap, window);
  o.require(std::abs(c_dp / dp_cubic_target(eye) - 1.0) < 0.1,
            "DP c3=" + num(c_dp) + " target=" + num(dp_cubic_target(eye)));
  Rng rng(4);
  const Matrix t = balanced_teacher(3, 4, rng);
  const ComparisonReport orr = early_phase_gap(DesignKind::OR, t, window, 300);
  const double c_or = fit_early_cubic(orr.times, orr.gap, window);
  o.require(std::abs(c_or / or_cubic_target(t) - 1.0) < 0.1,
            "OR c3=" + num(c_or) + " target=" + num(or_cubic_target(t)));
  return o;
}

Outcome criterion5() {
  Outcome o;
  Rng rng(5);
  const ComparisonReport r = run_thm4(balanced_teacher(3, 4, rng), 5.0, 5000);
  for (const char* name : {"ordering_min_lead", "symmetry_q", "symmetry_alpha_norm", "conservation_or",
                           "theta_oracle_standard", "theta_oracle_or", "matched_gap_min"}) {
    require_check(o, r.checks, name);
  }
  return o;
}

Outcome criterion6() {
  Outcome o;
  const std::vector<Check> checks = run_preconditioner_suite(3, 4, 100, 6);
  std::size_t failed = 0;
  for (const Check& c : checks) failed += !c.pass;
  o.require(failed == 0, std::to_string(checks.size() - failed) + "/" + std::to_string(checks.size()) + " checks");
  require_check(o, checks, "or_spectrum");
  return o;
}

Outcome criterion7() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SdeConfig decayed;
  SdeConfig free = decayed;
  free.mu = 0.0;
  free.horizon = 200.0;
  const WdReport r = run_wd_experiment(decayed, free, 256, 7000);
  for (const char* name : {"gamma_gronwall_decayed", "w_gronwall_decayed", "w_gronwall_free", "gamma_growth_free",
                           "s_nondecreasing_free"}) {
    require_check(o, r.checks, name);
  }
  o.require(r.decayed_moments.diverged == 0 && r.free_moments.diverged == 0, "no divergence");
  const double s = seconds_since(t0);
  o.require(s < 120.0, "time=" + num(s) + "s");
  return o;
}

Outcome criterion8() {
  Outcome o;
  Rng rng(8);
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    Vector w(4), g(4), a(4);
    for (std::size_t i = 0; i < 4; ++i) {
      w[i] = rng.normal();
      g[i] = rng.normal();
      a[i] = rng.normal();
    }
    worst = std::max(worst, std::abs(max_eigenvalue(assemble_hessian(w, g, a)) - hessian_sharpness(w, g, a).lambda_max));
  }
  o.require(worst < 1e-8, "power iteration diff=" + num(worst));
  const SharpnessRecord ex = hessian_sharpness(Vector{0, 0}, Vector{1, 1}, Vector{1, 1});
  auto same7 = [](double v, double ref) { return std::round(v * 1e7) == std::round(ref * 1e7); };
  o.require(same7(ex.trace, 2.0) && same7(ex.lambda_max, 1.6180340) && same7(ex.frob, 2.4494897),
            "worked example " + num(ex.trace) + "/" + num(ex.lambda_max) + "/" + num(ex.frob));
  return o;
}

Outcome criterion9() {
  Outcome o;
  const Vector w{0.3, -0.2, 0.8, 0.1};
  const Vector g{1.1, 0.9, 0.6, 1.4};
  const Vector a{0.5, 0.5, 0.5, 0.5};
  double prev = 0.0, prev_se = 0.0;
  bool first = true;
  for (double eta : {1e-2, 5e-3, 2.5e-3}) {
    const DescentExpansion e = sgd_descent_expansion(w, g, a, eta, NoiseModel::Isotropic, 1.0, 100000, 9);
    const double scaled = std::abs(e.residual) / (eta * eta);
    const double se = e.stderr_ / (eta * eta);
    if (!first) {
      const double margin = 3.0 * std::sqrt(se * se + prev_se * prev_se);
      o.require(prev - scaled > margin, "eta=" + num(eta) + " drop=" + num(prev - scaled) + " 3se=" + num(margin));
    }
    first = false;
    prev = scaled;
    prev_se = se;
  }
  return o;
}

Outcome criterion10() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  BlockConfig small;
  small.d_model = 8;
  small.n_head = 2;
  small.d_ffn = 12;
  Rng rng(10);
  double worst_grad = 0.0, worst_absorb = 0.0;
  std::size_t designs = 0;
  for (bool causal : {false, true})
    for (bool hg : {false, true})
      for (Placement pl : {Placement::Standard, Placement::AP, Placement::DP, Placement::DNP})
        for (Reparam rp : {Reparam::None, Reparam::OR, Reparam::ER}) {
          BlockConfig c = small;
          c.causal = causal;
          c.heterogeneous = hg;
          c.placement = pl;
          c.reparam = rp;
          BlockParams p = init_params(c, rng);
          randomize_params(p, rng);
          Matrix x(3, c.d_model), up(3, c.d_model);
          for (double& v : x.data()) v = rng.normal();
          for (double& v : up.data()) v = rng.normal();
          for (const GradCheckRow& row : gradient_check(p, x, up)) worst_grad = std::max(worst_grad, row.max_rel_err);
          worst_absorb =
              std::max(worst_absorb, max_abs_diff(block_forward(p, x), block_forward(absorb_input_scales(p), x)));
          ++designs;
        }
  o.require(worst_grad < 1e-5, std::to_string(designs) + " designs gradcheck=" + num(worst_grad));
  o.require(worst_absorb < 1e-12, "absorption=" + num(worst_absorb));
  const ParamCount llama = count_params(22, 1792, 2, 1, std::size_t{1'028'065'024});
  char ratio[32];
  std::snprintf(ratio, sizeof ratio, "%.3g", *llama.ratio);
  o.require(llama.scale_count == 80'640 && std::string(ratio) == "7.84e-05",
            "count=" + std::to_string(llama.scale_count) + " ratio=" + ratio);

  BlockConfig shape;  // d_model 32, 4 heads, d_ffn 64
  const BlockParams teacher = make_teacher(shape, 2024);
  const BlockConfig variant = parse_design("hg+dnp+or", shape);
  TrainConfig base_train;
  base_train.policy = DecayPolicy::MatricesOnly;
  TrainConfig variant_train;
  variant_train.policy = DecayPolicy::Iwd;
  int wins = 0;
  std::string finals;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const double lb = train_toy(shape, teacher, base_train, s).final_loss;
    const double lv = train_toy(variant, teacher, variant_train, s).final_loss;
    wins += lv <= lb;
    finals += (finals.empty() ? "" : ",") + num(lv / lb);
  }
  o.require(wins >= 4, "wins=" + std::to_string(wins) + "/5 (variant/standard " + finals + ")");
  const double secs = seconds_since(t0);
  o.require(secs < 300.0, "time=" + num(secs) + "s");
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int run_tool(const fs::path& out) {
  const std::string cmd = std::string("\"") + SCALEVEC_TOOL + "\" run --config \"" + SCALEVEC_CONFIG +
                          "\" --seed 42 --out-dir \"" + out.string() + "\" > \"" + (out.string() + ".log") + "\" 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

Outcome criterion11() {
  Outcome o;
  const fs::path base = fs::temp_directory_path() / "scalevec_acceptance";
  fs::remove_all(base);
  fs::create_directories(base);
  const int a = run_tool(base / "a");
  const int b = run_tool(base / "b");
  std::size_t compared = 0;
  bool identical = fs::exists(base / "a");
  if (identical) {
    for (const auto& entry : fs::directory_iterator(base / "a")) {
      if (entry.path().extension() != ".csv") continue;
      ++compared;
      if (slurp(entry.path()) != slurp(base / "b" / entry.path().filename())) identical = false;
    }
  }
  o.require(identical && compared >= 7, std::to_string(compared) + " CSVs byte-identical");
  o.require(a == 0 && b == 0, "exit codes " + std::to_string(a) + "/" + std::to_string(b));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria = {criterion1, criterion2, criterion3, criterion4,
                                                          criterion5, criterion6, criterion7, criterion8,
                                                          criterion9, criterion10, criterion11};
  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);
  if (only < 0 || only > static_cast<int>(criteria.size())) {
    std::fprintf(stderr, "usage: %s [criterion 1-%zu]\n", argv[0], criteria.size());
    return 2;
  }
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i + 1) != only) continue;
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    std::printf("%s criterion %zu: %s\n", o.pass ? "PASS" : "FAIL", i + 1, o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
