#include "scalevec/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <variant>

#include "scalevec/error.hpp"
#include "scalevec/rng.hpp"

namespace scalevec {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Check strictly_positive(std::string name, double observed) {
  return Check{std::move(name), observed, 0.0, observed > 0.0};
}

// Largest increase between consecutive losses; <= slack means monotone.
double max_loss_increase(const Vector& losses) {
  double worst = -kInf;
  for (std::size_t k = 1; k < losses.size(); ++k) worst = std::max(worst, losses[k] - losses[k - 1]);
  return losses.size() < 2 ? 0.0 : worst;
}

ComparisonReport compare(std::string experiment, std::string baseline_label,
                         std::string variant_label, const Trajectory& base,
                         const Trajectory& var) {
  ComparisonReport r;
  r.experiment = std::move(experiment);
  r.baseline_label = std::move(baseline_label);
  r.variant_label = std::move(variant_label);
  r.times = base.times;
  r.loss_baseline = base.losses;
  r.loss_variant = var.losses;
  r.gap.resize(r.times.size());
  for (std::size_t k = 0; k < r.times.size(); ++k) r.gap[k] = var.losses[k] - base.losses[k];
  r.baseline_drift = base.conserved_drift_series();
  r.variant_drift = var.conserved_drift_series();
  r.baseline_error_estimate = base.error_estimate;
  r.variant_error_estimate = var.error_estimate;
  return r;
}

// min over t > 0 of (baseline - variant); positive means the variant is strictly ahead.
double min_lead(const ComparisonReport& r) {
  double m = kInf;
  for (std::size_t k = 1; k < r.times.size(); ++k) m = std::min(m, -r.gap[k]);
  return m;
}

void add_monotone_checks(ComparisonReport& r, const FlowTolerances& tol) {
  r.checks.push_back(
      check_at_most("monotone_" + r.baseline_label, max_loss_increase(r.loss_baseline), tol.monotone_slack));
  r.checks.push_back(
      check_at_most("monotone_" + r.variant_label, max_loss_increase(r.loss_variant), tol.monotone_slack));
}

ParamState state_at(const Trajectory& tr, std::size_t k, DesignKind kind, const Matrix& target) {
  return ParamState::unflatten(kind, target.rows(), target.cols(), tr.states[k]);
}

double rate_of(const ParamState& s, const Matrix& target) {
  const Vector g = loss_gradient(s, target).flatten();
  return -squared_norm(g);
}

}  // namespace

Check check_at_most(std::string name, double observed, double threshold) {
  return Check{std::move(name), observed, threshold, observed <= threshold};
}

Check check_at_least(std::string name, double observed, double threshold) {
  return Check{std::move(name), observed, threshold, observed >= threshold};
}

bool ComparisonReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

double Trajectory::max_conserved_drift() const {
  const Vector series = conserved_drift_series();
  return series.empty() ? 0.0 : *std::max_element(series.begin(), series.end());
}

Vector Trajectory::conserved_drift_series() const {
  Vector out(conserved.size(), 0.0);
  if (conserved.empty()) return out;
  const Vector& c0 = conserved.front();
  for (std::size_t k = 0; k < conserved.size(); ++k) out[k] = c0.empty() ? 0.0 : max_abs_diff(conserved[k], c0);
  return out;
}

Trajectory integrate(const FlowSystem& system, std::span<const double> y0, double horizon,
                     std::size_t steps, IntegrateOptions opts) {
  if (steps == 0 || !(horizon > 0.0)) {
    throw Error(ErrorCode::ConfigError, "integrate needs steps >= 1 and T > 0");
  }
  const std::size_t n = y0.size();
  const double dt = horizon / static_cast<double>(steps);
  Vector y(y0.begin(), y0.end());
  Vector k1(n), k2(n), k3(n), k4(n), tmp(n);

  Trajectory tr;
  tr.times.reserve(steps + 1);
  tr.losses.reserve(steps + 1);
  auto record = [&](std::size_t k) {
    tr.times.push_back(static_cast<double>(k) * dt);
    tr.losses.push_back(system.loss(y));
    if (system.conserved) tr.conserved.push_back(system.conserved(y));
    if (opts.keep_states) tr.states.push_back(y);
  };
  record(0);

  for (std::size_t k = 1; k <= steps; ++k) {
    system.rhs(y, k1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * dt * k1[i];
    system.rhs(tmp, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * dt * k2[i];
    system.rhs(tmp, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + dt * k3[i];
    system.rhs(tmp, k4);
    for (std::size_t i = 0; i < n; ++i) y[i] += dt / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    if (!all_finite(y)) {
      throw Error(ErrorCode::NonFinite, "state became non-finite at step " + std::to_string(k));
    }
    record(k);
  }

  if (opts.error_estimate) {
    const Trajectory fine =
        integrate(system, y0, horizon, 2 * steps, IntegrateOptions{false, false});
    double worst = 0.0;
    for (std::size_t k = 0; k <= steps; ++k) {
      worst = std::max(worst, std::abs(tr.losses[k] - fine.losses[2 * k]));
    }
    tr.error_estimate = worst;
  }
  return tr;
}

FlowSystem design_flow(DesignKind kind, const Matrix& target) {
  const std::size_t c = target.rows();
  const std::size_t d = target.cols();
  FlowSystem sys;
  sys.rhs = [kind, c, d, target](std::span<const double> y, std::span<double> dydt) {
    const Vector v = grad_flow_rhs(ParamState::unflatten(kind, c, d, y), target).flatten();
    std::copy(v.begin(), v.end(), dydt.begin());
  };
  sys.loss = [kind, c, d, target](std::span<const double> y) {
    return population_loss(ParamState::unflatten(kind, c, d, y), target);
  };
  sys.conserved = [kind, c, d](std::span<const double> y) {
    return conserved_quantities(ParamState::unflatten(kind, c, d, y));
  };
  return sys;
}

double closed_form_noscale_loss(double t, const Matrix& target) {
  return 0.5 * std::exp(-2.0 * t) * frobenius_sq(target);
}

Vector integrate_scalar(const std::function<double(double)>& rate, double y0, double horizon,
                        std::size_t steps) {
  FlowSystem sys;
  sys.rhs = [&rate](std::span<const double> y, std::span<double> dy) { dy[0] = rate(y[0]); };
  sys.loss = [](std::span<const double> y) { return y[0]; };
  const double init[1] = {y0};
  return integrate(sys, init, horizon, steps, IntegrateOptions{false, false}).losses;
}

Matrix random_unit_teacher(std::size_t c, std::size_t d, Rng& rng) {
  Matrix w(c, d);
  for (double& x : w.data()) x = rng.normal();
  const double scale = 1.0 / std::sqrt(frobenius_sq(w));
  for (double& x : w.data()) x *= scale;
  return w;
}

Matrix balanced_teacher(std::size_t c, std::size_t d, Rng& rng) {
  Matrix w(c, d);
  for (double& x : w.data()) x = rng.normal();
  const double col_norm = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t j = 0; j < d; ++j) {
    const double scale = col_norm / norm(w.col(j));
    for (std::size_t i = 0; i < c; ++i) w(i, j) *= scale;
  }
  return w;
}

ComparisonReport run_thm1(const Matrix& target, double horizon, std::size_t steps,
                          const FlowTolerances& tol) {
  if (frobenius_sq(target) == 0.0) throw Error(ErrorCode::ConfigError, "teacher must be nonzero");
  const std::size_t c = target.rows();
  const std::size_t d = target.cols();

  const ParamState g0 = ParamState::initial(DesignKind::NoScale, c, d);
  const ParamState f0 = ParamState::initial(DesignKind::Standard, c, d);
  const Trajectory g = integrate(design_flow(DesignKind::NoScale, target), g0.flatten(), horizon,
                                 steps, IntegrateOptions{true, true});
  const Trajectory f = integrate(design_flow(DesignKind::Standard, target), f0.flatten(), horizon,
                                 steps, IntegrateOptions{c * d == 1, true});

  ComparisonReport r = compare("thm1", "noscale", "standard", g, f);
  r.checks.push_back(check_at_most("initial_loss_equal", std::abs(r.gap[0]), 0.0));
  r.checks.push_back(strictly_positive("ordering_min_lead", min_lead(r)));
  r.checks.push_back(check_at_most("conservation_drift", f.max_conserved_drift(), tol.conservation));

  double worst_rel = 0.0;
  double worst_traj = 0.0;
  for (std::size_t k = 0; k < g.times.size(); ++k) {
    const double exact = closed_form_noscale_loss(g.times[k], target);
    worst_rel = std::max(worst_rel, std::abs(g.losses[k] - exact) / exact);
    const double factor = 1.0 - std::exp(-g.times[k]);
    for (std::size_t i = 0; i < target.size(); ++i) {
      worst_traj = std::max(worst_traj, std::abs(g.states[k][i] - factor * target.data()[i]));
    }
  }
  r.checks.push_back(check_at_most("closed_form_relative", worst_rel, tol.closed_form_relative));
  r.checks.push_back(check_at_most("noscale_trajectory", worst_traj, 1e-8));

  if (c * d == 1) {
    // Scalar case: gamma^2 - u^2 = 1 closes the effective-weight ODE.
    const double w = target(0, 0);
    const Vector a = integrate_scalar(
        [w](double x) { return std::sqrt(1.0 + 4.0 * x * x) * (w - x); }, 0.0, horizon, steps);
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const ParamState s = state_at(f, k, DesignKind::Standard, target);
      worst = std::max(worst, std::abs(s.weight(0, 0) * s.in_scale[0] - a[k]));
    }
    r.checks.push_back(check_at_most("scalar_oracle", worst, tol.oracle));
  }
  add_monotone_checks(r, tol);
  return r;
}

ParamState matched_standard_from_dp(const ParamState& phi) {
  if (phi.kind != DesignKind::DP) throw Error(ErrorCode::ConfigError, "expected a DP state");
  Matrix u = phi.weight;
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (double& x : u.row(i)) x *= phi.out_scale[i];
  return ParamState::standard(std::move(u), phi.in_scale);
}

DpRates dp_instantaneous_rates(const ParamState& f, const ParamState& phi, const Matrix& target) {
  if (f.kind != DesignKind::Standard || phi.kind != DesignKind::DP) {
    throw Error(ErrorCode::MatchingViolation, "expected a Standard state and a DP state");
  }
  const ParamState expected = matched_standard_from_dp(phi);
  const double mismatch = std::max(max_abs_diff(f.in_scale, phi.in_scale),
                                   max_abs_diff(f.weight, expected.weight));
  if (mismatch > 1e-10) {
    throw Error(ErrorCode::MatchingViolation,
                "states are not matched (deviation " + std::to_string(mismatch) + ")");
  }

  DpRates out;
  out.rate_f = rate_of(f, target);
  out.rate_phi = rate_of(phi, target);
  out.gap = out.rate_f - out.rate_phi;

  const Matrix a = effective_matrix(phi);
  double row_term = 0.0;
  double scale_term = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double ga2 = phi.out_scale[i] * phi.out_scale[i];
    double inner = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double r = target(i, j) - a(i, j);
      inner += a(i, j) * r;
      scale_term += (ga2 - 1.0) * f.in_scale[j] * f.in_scale[j] * r * r;
    }
    row_term += inner * inner / ga2;
  }
  out.gap_formula = scale_term + row_term;
  return out;
}

IdentityCheck dp_identity_check(double y) {
  const double q_phi = 1.0 + 4.0 * y + 3.0 * y * y;
  const double lhs = q_phi * q_phi - (1.0 + 4.0 * y * (1.0 + y) * (1.0 + y));
  const double rhs = y * (((9.0 * y + 20.0) * y + 14.0) * y + 4.0);
  return {lhs, rhs};
}

ScalarDpOracle scalar_dp_oracle(double w_star, double horizon, std::size_t steps) {
  if (!(w_star > 0.0)) throw Error(ErrorCode::ConfigError, "scalar oracle needs w* > 0");
  ScalarDpOracle out;
  out.a_f = integrate_scalar(
      [w_star](double a) { return std::sqrt(1.0 + 4.0 * a * a) * (w_star - a); }, 0.0, horizon,
      steps);
  const Vector m = integrate_scalar(
      [w_star](double m) {
        const double g2 = 1.0 + m * m;
        return g2 * (w_star - m * g2);
      },
      0.0, horizon, steps);
  out.a_phi.resize(m.size());
  out.times.resize(m.size());
  const double dt = horizon / static_cast<double>(steps);
  for (std::size_t k = 0; k < m.size(); ++k) {
    out.a_phi[k] = m[k] * (1.0 + m[k] * m[k]);
    out.times[k] = static_cast<double>(k) * dt;
  }
  return out;
}

ComparisonReport run_dp_matching_support(const Matrix& target, double horizon,
                                         std::size_t steps, const FlowTolerances& tol) {
  const std::size_t c = target.rows();
  const std::size_t d = target.cols();
  std::size_t nonzeros = 0;
  for (std::size_t i = 0; i < c; ++i) {
    std::size_t in_row = 0;
    for (std::size_t j = 0; j < d; ++j) in_row += target(i, j) != 0.0;
    if (in_row > 1) throw Error(ErrorCode::SupportViolation, "row with two nonzeros");
    nonzeros += in_row;
  }
  for (std::size_t j = 0; j < d; ++j) {
    std::size_t in_col = 0;
    for (std::size_t i = 0; i < c; ++i) in_col += target(i, j) != 0.0;
    if (in_col > 1) throw Error(ErrorCode::SupportViolation, "column with two nonzeros");
  }
  if (nonzeros == 0) throw Error(ErrorCode::SupportViolation, "teacher is zero");

  const Trajectory f =
      integrate(design_flow(DesignKind::Standard, target),
                ParamState::initial(DesignKind::Standard, c, d).flatten(), horizon, steps,
                IntegrateOptions{true, true});
  const Trajectory phi = integrate(design_flow(DesignKind::DP, target),
                                   ParamState::initial(DesignKind::DP, c, d).flatten(), horizon,
                                   steps, IntegrateOptions{true, true});

  ComparisonReport r = compare("dp", "standard", "dp", f, phi);
  r.checks.push_back(strictly_positive("ordering_min_lead", min_lead(r)));
  r.checks.push_back(check_at_most("conservation_drift_standard", f.max_conserved_drift(), tol.conservation));
  r.checks.push_back(check_at_most("conservation_drift_dp", phi.max_conserved_drift(), tol.conservation));

  double off_support = 0.0;
  for (std::size_t k = 0; k < f.times.size(); ++k) {
    const ParamState sf = state_at(f, k, DesignKind::Standard, target);
    const ParamState sp = state_at(phi, k, DesignKind::DP, target);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (target(i, j) == 0.0)
          off_support = std::max({off_support, std::abs(sf.weight(i, j)), std::abs(sp.weight(i, j))});
  }
  r.checks.push_back(check_at_most("support_preservation", off_support, tol.support));

  double oracle_dev = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double w = target(i, j);
      if (w == 0.0) continue;
      const double sign = w > 0.0 ? 1.0 : -1.0;
      const ScalarDpOracle oracle = scalar_dp_oracle(std::abs(w), horizon, steps);
      for (std::size_t k = 0; k < f.times.size(); ++k) {
        const double af = effective_matrix(state_at(f, k, DesignKind::Standard, target))(i, j);
        const double ap = effective_matrix(state_at(phi, k, DesignKind::DP, target))(i, j);
        oracle_dev = std::max({oracle_dev, std::abs(sign * af - oracle.a_f[k]),
                               std::abs(sign * ap - oracle.a_phi[k])});
      }
    }
  }
  r.checks.push_back(check_at_most("scalar_oracle", oracle_dev, tol.oracle));
  add_monotone_checks(r, tol);
  return r;
}

double fit_early_cubic(std::span<const double> times, std::span<const double> gap,
                       CubicWindow window) {
  if (times.size() != gap.size()) throw Error(ErrorCode::DimensionMismatch, "times vs gap");
  // Half-step slack so grid points that land on the window edges count.
  const double slack = times.size() > 1 ? 0.5 * (times[1] - times[0]) * 1e-6 : 0.0;
  double num = 0.0;
  double den = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double t = times[k];
    if (t < window.t_begin - slack || t > window.t_end + slack) continue;
    const double t3 = t * t * t;
    num += gap[k] * t3;
    den += t3 * t3;
    ++used;
  }
  if (used < 20) {
    throw Error(ErrorCode::InsufficientPoints,
                "cubic fit needs >= 20 points in the window, got " + std::to_string(used));
  }
  return num / den;
}

ComparisonReport early_phase_gap(DesignKind variant, const Matrix& target, CubicWindow window,
                                 std::size_t steps) {
  const std::size_t c = target.rows();
  const std::size_t d = target.cols();
  const Trajectory f = integrate(design_flow(DesignKind::Standard, target),
                                 ParamState::initial(DesignKind::Standard, c, d).flatten(),
                                 window.t_end, steps, IntegrateOptions{false, false});
  const Trajectory v = integrate(design_flow(variant, target),
                                 ParamState::initial(variant, c, d).flatten(), window.t_end,
                                 steps, IntegrateOptions{false, false});
  return compare("early", "standard", std::string(to_string(variant)), f, v);
}

double dp_cubic_target(const Matrix& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < target.rows(); ++i) {
    const double r2 = squared_norm(target.row(i));
    s += r2 * r2;
  }
  return -2.0 / 3.0 * s;
}

double or_cubic_target(const Matrix& target) {
  const double f2 = frobenius_sq(target);
  const double d = static_cast<double>(target.cols());
  return -2.0 / 3.0 * (1.0 - 1.0 / d) * f2 * f2;
}

Vector theta_ode_loss(double k, double rho, std::size_t d, double horizon, std::size_t steps) {
  Vector theta = integrate_scalar(
      [k, rho](double th) { return std::sqrt(1.0 + 4.0 * k * rho * th * th) * (1.0 - th); }, 0.0,
      horizon, steps);
  const double scale = 0.5 * static_cast<double>(d) * rho;
  for (double& th : theta) th = scale * (1.0 - th) * (1.0 - th);
  return theta;
}

double or_matched_gap(const ParamState& s, const Matrix& target) {
  if (s.kind != DesignKind::OR) throw Error(ErrorCode::ConfigError, "expected an OR state");
  const std::size_t c = s.rows();
  const std::size_t d = s.cols();
  const Vector q = sphere_normalize(s.in_scale);
  const double rho = or_rho(s.magnitude, s.in_scale);
  Vector sv(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double gj = s.magnitude * q[j];
    for (std::size_t i = 0; i < c; ++i) {
      sv[j] += s.weight(i, j) * (target(i, j) - gj * s.weight(i, j));
    }
  }
  const double qs = dot(q, sv);
  double perp2 = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double p = sv[j] - qs * q[j] / static_cast<double>(d);
    perp2 += p * p;
  }
  return qs * qs + rho * perp2 - squared_norm(sv);
}

ComparisonReport run_thm4(const Matrix& target, double horizon, std::size_t steps,
                          const FlowTolerances& tol) {
  const std::size_t c = target.rows();
  const std::size_t d = target.cols();
  Vector col_norms2(d);
  for (std::size_t j = 0; j < d; ++j) col_norms2[j] = squared_norm(target.col(j));
  const double rho = col_norms2.front();
  if (!(rho > 0.0)) throw Error(ErrorCode::UnbalancedTeacher, "teacher column is zero");
  for (double n2 : col_norms2) {
    if (std::abs(n2 - rho) > 1e-10 * rho) {
      throw Error(ErrorCode::UnbalancedTeacher, "teacher columns have different norms");
    }
  }

  const Trajectory f = integrate(design_flow(DesignKind::Standard, target),
                                 ParamState::initial(DesignKind::Standard, c, d).flatten(),
                                 horizon, steps, IntegrateOptions{false, true});
  const Trajectory psi = integrate(design_flow(DesignKind::OR, target),
                                   ParamState::initial(DesignKind::OR, c, d).flatten(), horizon,
                                   steps, IntegrateOptions{true, true});

  ComparisonReport r = compare("or", "standard", "or", f, psi);
  if (d > 1) {
    r.checks.push_back(strictly_positive("ordering_min_lead", min_lead(r)));
  } else {
    double worst = 0.0;
    for (double g : r.gap) worst = std::max(worst, std::abs(g));
    r.checks.push_back(check_at_most("identical_when_d1", worst, 1e-12));
  }

  const double sqrt_d = std::sqrt(static_cast<double>(d));
  double q_dev = 0.0;
  double alpha_dev = 0.0;
  double conservation = 0.0;
  double min_gap = kInf;
  for (std::size_t k = 0; k < psi.times.size(); ++k) {
    const ParamState s = state_at(psi, k, DesignKind::OR, target);
    const Vector q = sphere_normalize(s.in_scale);
    for (double x : q) q_dev = std::max(q_dev, std::abs(x - 1.0));
    alpha_dev = std::max(alpha_dev, std::abs(norm(s.in_scale) - sqrt_d));
    conservation = std::max(
        conservation, std::abs(s.magnitude * s.magnitude - frobenius_sq(s.weight) - 1.0));
    min_gap = std::min(min_gap, or_matched_gap(s, target));
  }
  r.checks.push_back(check_at_most("symmetry_q", q_dev, tol.symmetry));
  r.checks.push_back(check_at_most("symmetry_alpha_norm", alpha_dev, tol.symmetry));
  r.checks.push_back(check_at_most("conservation_or", conservation, tol.conservation));
  r.checks.push_back(check_at_most("conservation_drift_standard", f.max_conserved_drift(), tol.conservation));

  const Vector theta_f = theta_ode_loss(1.0, rho, d, horizon, steps);
  const Vector theta_psi = theta_ode_loss(static_cast<double>(d), rho, d, horizon, steps);
  r.checks.push_back(check_at_most("theta_oracle_standard", max_abs_diff(theta_f, f.losses), tol.oracle));
  r.checks.push_back(check_at_most("theta_oracle_or", max_abs_diff(theta_psi, psi.losses), tol.oracle));
  r.checks.push_back(check_at_least("matched_gap_min", min_gap, tol.matched_gap_floor));
  add_monotone_checks(r, tol);
  return r;
}

std::vector<Check> run_preconditioner_suite(std::size_t c, std::size_t d, std::size_t n_states,
                                            std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Check> checks;
  for (DesignKind kind : {DesignKind::NoScale, DesignKind::Standard, DesignKind::AP,
                          DesignKind::DP, DesignKind::OR, DesignKind::ER}) {
    const std::string name(to_string(kind));
    double grad_err = 0.0;
    double jac_err = 0.0;
    double asym = 0.0;
    double min_eig = kInf;
    double unified = 0.0;
    for (std::size_t n = 0; n < n_states; ++n) {
      const ParamState s = random_state(kind, c, d, rng);
      Matrix target(c, d);
      for (double& x : target.data()) x = rng.normal();
      grad_err = std::max(grad_err, gradient_check(s, target));
      jac_err = std::max(jac_err, jacobian_check(s));
      const Matrix p = induced_preconditioner(s);
      asym = std::max(asym, max_asymmetry(p));
      min_eig = std::min(min_eig, min_eigenvalue(p));
      const Matrix a = effective_matrix(s);
      const Matrix rebuilt = apply_unified(s.weight, std::get<UnifiedFactors>(unified_factors(s)));
      double scale = 1.0;
      for (double x : a.data()) scale = std::max(scale, std::abs(x));
      unified = std::max(unified, max_abs_diff(a, rebuilt) / scale);
    }
    checks.push_back(check_at_most("gradient_fd_" + name, grad_err, 1e-6));
    checks.push_back(check_at_most("jacobian_fd_" + name, jac_err, 1e-6));
    checks.push_back(check_at_most("precond_symmetry_" + name, asym, 1e-12));
    checks.push_back(check_at_least("precond_min_eig_" + name, min_eig, -1e-10));
    checks.push_back(check_at_most("unified_reconstruction_" + name, unified, 1e-15));
  }

  {
    const ParamState dnp = random_state(DesignKind::DNP, c, d, rng);
    const bool marker = std::holds_alternative<NonReparam>(unified_factors(dnp));
    checks.push_back(Check{"dnp_non_reparam", marker ? 1.0 : 0.0, 1.0, marker});
  }

  // On the sphere the OR preconditioner has q as an eigenvector with
  // eigenvalue d; the remaining d-1 eigenvalues share trace (d-1) beta^2 and
  // lie between the extreme eigenvalues, so pinning both extremes pins them all.
  double spectrum = 0.0;
  for (std::size_t n = 0; n < n_states; ++n) {
    const std::size_t dd = std::max<std::size_t>(d, 3);
    Vector alpha(dd);
    for (double& x : alpha) x = rng.normal();
    alpha = sphere_normalize(alpha);
    const double beta = 0.2 + 1.3 * rng.uniform();
    const double b2 = beta * beta;
    const double dval = static_cast<double>(dd);
    const Matrix p = or_scale_preconditioner(beta, alpha);
    const Vector pq = matvec(p, alpha);
    double eig_q = 0.0;
    for (std::size_t j = 0; j < dd; ++j) eig_q = std::max(eig_q, std::abs(pq[j] - dval * alpha[j]));
    double trace = 0.0;
    for (std::size_t j = 0; j < dd; ++j) trace += p(j, j);
    spectrum = std::max({spectrum, eig_q, std::abs(max_eigenvalue(p) - dval),
                         std::abs(min_eigenvalue(p) - b2),
                         std::abs(trace - dval - (dval - 1.0) * b2)});
  }
  checks.push_back(check_at_most("or_spectrum", spectrum, 1e-10));
  return checks;
}

}  // namespace scalevec
