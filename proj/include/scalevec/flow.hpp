#pragma once

// Deterministic gradient-flow experiments: a fixed-step RK4 integrator,
// closed-form and scalar oracles, and the design-versus-design comparisons.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scalevec/designs.hpp"
#include "scalevec/linalg.hpp"

namespace scalevec {

class Rng;

/// One named pass/fail measurement.
struct Check {
  std::string name;
  double observed = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

/// observed <= threshold
Check check_at_most(std::string name, double observed, double threshold);
/// observed >= threshold
Check check_at_least(std::string name, double observed, double threshold);

using RhsFn = std::function<void(std::span<const double> y, std::span<double> dydt)>;
using ScalarFn = std::function<double(std::span<const double> y)>;
using VectorFn = std::function<Vector(std::span<const double> y)>;

/// An autonomous ODE together with what to record along it.
struct FlowSystem {
  RhsFn rhs;
  ScalarFn loss;
  VectorFn conserved;  ///< may be empty
};

struct IntegrateOptions {
  bool keep_states = false;
  /// Re-run at half step and report the largest loss deviation on the shared grid.
  bool error_estimate = true;
};

struct Trajectory {
  Vector times;
  Vector losses;
  std::vector<Vector> conserved;  ///< per time, one entry per conserved quantity
  std::vector<Vector> states;     ///< per time, only when keep_states
  double error_estimate = 0.0;

  /// max over t and quantities of |c(t) - c(0)|
  double max_conserved_drift() const;
  /// per-time max |c(t) - c(0)|
  Vector conserved_drift_series() const;
};

/// Classical RK4 with dt = T / steps. Throws NonFinite if the state blows up.
Trajectory integrate(const FlowSystem& system, std::span<const double> y0, double horizon,
                     std::size_t steps, IntegrateOptions opts = {});

/// Gradient flow of population_loss for one design; the state vector is
/// ParamState::flatten().
FlowSystem design_flow(DesignKind kind, const Matrix& target);

/// 1/2 e^{-2t} ||W*||_F^2, the no-scale loss from W(0) = 0.
double closed_form_noscale_loss(double t, const Matrix& target);

/// Integrates y' = rate(y) for a scalar, returning y on the grid 0, dt, ..., T.
Vector integrate_scalar(const std::function<double(double)>& rate, double y0, double horizon,
                        std::size_t steps);

/// Teachers used by the theorem suites: i.i.d. normal entries, then scaled.
Matrix random_unit_teacher(std::size_t c, std::size_t d, Rng& rng);
/// Columns rescaled to a common norm so that ||W*||_F = 1.
Matrix balanced_teacher(std::size_t c, std::size_t d, Rng& rng);

struct ComparisonReport {
  std::string experiment;
  std::string baseline_label;
  std::string variant_label;
  Vector times;
  Vector loss_baseline;
  Vector loss_variant;
  Vector gap;  ///< loss_variant - loss_baseline
  Vector baseline_drift;  ///< per-time conservation drift of the baseline
  Vector variant_drift;
  double baseline_error_estimate = 0.0;  ///< step-halving loss deviation
  double variant_error_estimate = 0.0;
  std::vector<Check> checks;

  bool passed() const;
};

struct FlowTolerances {
  double conservation = 1e-6;
  double closed_form_relative = 1e-8;
  double oracle = 1e-6;
  double support = 1e-12;
  double symmetry = 1e-8;
  double matched_gap_floor = -1e-12;
  double monotone_slack = 1e-10;
};

/// Standard (variant) against NoScale (baseline) from U = 0, gamma = 1, W_g = 0.
ComparisonReport run_thm1(const Matrix& target, double horizon, std::size_t steps,
                          const FlowTolerances& tol = {});

struct DpRates {
  double rate_f = 0.0;       ///< dL_f/dt
  double rate_phi = 0.0;     ///< dL_phi/dt
  double gap = 0.0;          ///< rate_f - rate_phi, from the two rates
  double gap_formula = 0.0;  ///< closed-form expression for the same gap
};

/// Instantaneous loss rates of Standard and DP at a matched effective state
/// (gamma = gamma_b, U = diag(gamma_a) M). Throws MatchingViolation otherwise.
DpRates dp_instantaneous_rates(const ParamState& f_state, const ParamState& phi_state,
                               const Matrix& target);

/// Standard state that matches a DP state: U = diag(gamma_a) M, gamma = gamma_b.
ParamState matched_standard_from_dp(const ParamState& phi_state);

struct IdentityCheck {
  double lhs = 0.0;
  double rhs = 0.0;
};
/// (1 + 4y + 3y^2)^2 - (1 + 4y(1+y)^2) against y(9y^3 + 20y^2 + 14y + 4).
IdentityCheck dp_identity_check(double y);

struct ScalarDpOracle {
  Vector times;
  Vector a_f;    ///< Standard: a' = sqrt(1 + 4a^2)(w - a)
  Vector a_phi;  ///< DP: m' = (1 + m^2)(w - a), a = m(1 + m^2)
};
ScalarDpOracle scalar_dp_oracle(double w_star, double horizon, std::size_t steps);

/// DP (variant) against Standard (baseline) on a matching-support teacher.
/// Throws SupportViolation if the teacher is zero or not a matching.
ComparisonReport run_dp_matching_support(const Matrix& target, double horizon,
                                         std::size_t steps, const FlowTolerances& tol = {});

struct CubicWindow {
  double t_begin = 1e-3;
  double t_end = 3e-2;
};

/// Least-squares c3 for gap(t) ~ c3 t^3 over grid points inside the window.
/// Throws InsufficientPoints for fewer than 20 points.
double fit_early_cubic(std::span<const double> times, std::span<const double> gap,
                       CubicWindow window = {});

/// Integrates Standard and `variant` from initialization up to window.t_end
/// on a grid of `steps` and returns the loss gap series.
ComparisonReport early_phase_gap(DesignKind variant, const Matrix& target, CubicWindow window,
                                 std::size_t steps);

/// -(2/3) sum_i ||W*_i:||^4
double dp_cubic_target(const Matrix& target);
/// -(2/3) (1 - 1/d) ||W*||_F^4
double or_cubic_target(const Matrix& target);

/// theta' = sqrt(1 + 4 k rho theta^2)(1 - theta), theta(0) = 0; returns the
/// loss (d rho / 2)(1 - theta)^2 on the grid.
Vector theta_ode_loss(double k, double rho, std::size_t d, double horizon, std::size_t steps);

/// (q^T s)^2 + beta^2 ||P_q s||^2 - ||s||^2 at an OR state: how much faster
/// OR dissipates than Standard at the matched state U = V, gamma = beta Norm(alpha).
double or_matched_gap(const ParamState& or_state, const Matrix& target);

/// OR (variant) against Standard (baseline) on a teacher with equal column norms.
/// Throws UnbalancedTeacher otherwise.
ComparisonReport run_thm4(const Matrix& target, double horizon, std::size_t steps,
                          const FlowTolerances& tol = {});

/// Property checks on every reparameterizing design over n_states random
/// states: gradient and Jacobian against central differences, symmetry and
/// PSD of P = J J^T, unified-form reconstruction, DNP rejection, and the OR
/// scale-preconditioner spectrum on the sphere.
std::vector<Check> run_preconditioner_suite(std::size_t c, std::size_t d, std::size_t n_states,
                                            std::uint64_t seed);

}  // namespace scalevec
