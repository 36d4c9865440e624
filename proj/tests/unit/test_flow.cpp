#include <cmath>

#include "doctest.h"
#include "scalevec/error.hpp"
#include "scalevec/flow.hpp"
#include "scalevec/rng.hpp"

using namespace scalevec;

namespace {

FlowSystem decay_system() {
  FlowSystem sys;
  sys.rhs = [](std::span<const double> y, std::span<double> dy) { dy[0] = -y[0]; };
  sys.loss = [](std::span<const double> y) { return y[0]; };
  return sys;
}

bool all_pass(const ComparisonReport& r) {
  for (const Check& c : r.checks) {
    if (!c.pass) MESSAGE(c.name << " observed " << c.observed << " threshold " << c.threshold);
  }
  return r.passed();
}

}  // namespace

TEST_CASE("RK4 on exponential decay") {
  const Vector y0{1.0};
  const Trajectory tr = integrate(decay_system(), y0, 1.0, 1000);
  CHECK(tr.times.size() == 1001);
  CHECK(std::abs(tr.losses.back() - std::exp(-1.0)) < 1e-8);

  const Trajectory coarse = integrate(decay_system(), y0, 1.0, 20);
  const Trajectory fine = integrate(decay_system(), y0, 1.0, 40);
  const double ratio = coarse.error_estimate / fine.error_estimate;
  CHECK(ratio >= 12.0);
  CHECK(ratio <= 20.0);

  FlowSystem zero;
  zero.rhs = [](std::span<const double>, std::span<double> dy) { dy[0] = 0.0; };
  zero.loss = [](std::span<const double> y) { return y[0]; };
  const Trajectory flat = integrate(zero, Vector{2.5}, 3.0, 10);
  for (double v : flat.losses) CHECK(v == 2.5);

  CHECK_THROWS_AS(integrate(decay_system(), y0, 1.0, 0), Error);
  FlowSystem blowup;
  blowup.rhs = [](std::span<const double> y, std::span<double> dy) { dy[0] = y[0] * y[0]; };
  blowup.loss = [](std::span<const double> y) { return y[0]; };
  try {
    integrate(blowup, Vector{1.0}, 10.0, 100);
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFinite);
  }
}

TEST_CASE("closed form no-scale loss") {
  const Matrix t = Matrix::from_rows({{1.0}});
  CHECK(closed_form_noscale_loss(0.0, t) == 0.5);
  CHECK(closed_form_noscale_loss(1.0, t) == doctest::Approx(0.0676676).epsilon(1e-6));
  CHECK(closed_form_noscale_loss(50.0, t) < 1e-40);
}

TEST_CASE("Standard vs no-scale flow suite") {
  Rng rng(100);
  const Matrix t = random_unit_teacher(4, 8, rng);
  const ComparisonReport r = run_thm1(t, 5.0, 5000);
  CHECK(all_pass(r));
  CHECK(r.loss_baseline[0] == 0.5 * frobenius_sq(t));
  CHECK(r.loss_variant[0] == r.loss_baseline[0]);

  const ComparisonReport scalar = run_thm1(Matrix::from_rows({{1.0}}), 5.0, 5000);
  CHECK(all_pass(scalar));
  bool has_oracle = false;
  for (const Check& c : scalar.checks) has_oracle |= c.name == "scalar_oracle";
  CHECK(has_oracle);
}

TEST_CASE("DP instantaneous rates") {
  const Matrix t = Matrix::from_rows({{1.0, 0.5}, {-0.3, 2.0}});
  const ParamState phi0 = ParamState::initial(DesignKind::DP, 2, 2);
  const DpRates at_init = dp_instantaneous_rates(matched_standard_from_dp(phi0), phi0, t);
  CHECK(at_init.gap == 0.0);
  CHECK(at_init.gap_formula == 0.0);

  const Trajectory tr = integrate(design_flow(DesignKind::DP, t), phi0.flatten(), 0.1, 100,
                                  IntegrateOptions{true, false});
  const ParamState phi = ParamState::unflatten(DesignKind::DP, 2, 2, tr.states.back());
  const DpRates later = dp_instantaneous_rates(matched_standard_from_dp(phi), phi, t);
  CHECK(later.gap > 0.0);
  CHECK(std::abs(later.gap - later.gap_formula) < 1e-10);

  Rng rng(31);
  for (int n = 0; n < 100; ++n) {
    ParamState s = random_state(DesignKind::DP, 3, 4, rng);
    for (double& g : s.out_scale) g = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (1.0 + std::abs(rng.normal()));
    Matrix target(3, 4);
    for (double& x : target.data()) x = rng.normal();
    const DpRates r = dp_instantaneous_rates(matched_standard_from_dp(s), s, target);
    CHECK(std::abs(r.gap - r.gap_formula) <= 1e-10 * std::max(1.0, std::abs(r.rate_f)));
    CHECK(r.gap >= -1e-10);
  }

  ParamState bad = matched_standard_from_dp(phi);
  bad.in_scale[0] += 1e-6;
  try {
    dp_instantaneous_rates(bad, phi, t);
    FAIL("expected MatchingViolation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MatchingViolation);
  }
}

TEST_CASE("DP polynomial identity") {
  const IdentityCheck one = dp_identity_check(1.0);
  CHECK(one.lhs == 47.0);
  CHECK(one.rhs == 47.0);
  CHECK(std::abs(dp_identity_check(1e-12).lhs) < 1e-10);
  for (int k = 0; k < 1000; ++k) {
    const double y = std::pow(10.0, -6.0 + 7.0 * (k + 1) / 1000.0);
    const IdentityCheck c = dp_identity_check(y);
    CHECK(std::abs(c.lhs - c.rhs) / c.rhs < 1e-10);
  }
}

TEST_CASE("scalar DP oracle") {
  for (double w : {0.5, 1.0, 2.0}) {
    const ScalarDpOracle o = scalar_dp_oracle(w, 5.0, 5000);
    for (std::size_t k = 1; k < o.times.size(); ++k) CHECK(o.a_phi[k] > o.a_f[k]);
    CHECK(std::abs(o.a_phi.back() - w) < 1e-3);
    CHECK(std::abs(o.a_f.back() - w) < 1e-3);
  }
  CHECK_THROWS_AS(scalar_dp_oracle(0.0, 1.0, 10), Error);

  // 1x1 DP matrix integration against the m-oracle.
  const Matrix t = Matrix::from_rows({{1.5}});
  const Trajectory tr = integrate(design_flow(DesignKind::DP, t),
                                  ParamState::initial(DesignKind::DP, 1, 1).flatten(), 5.0, 5000,
                                  IntegrateOptions{true, false});
  const ScalarDpOracle o = scalar_dp_oracle(1.5, 5.0, 5000);
  double worst = 0.0;
  for (std::size_t k = 0; k < tr.states.size(); ++k) {
    const double a = effective_matrix(ParamState::unflatten(DesignKind::DP, 1, 1, tr.states[k]))(0, 0);
    worst = std::max(worst, std::abs(a - o.a_phi[k]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("DP matching-support suite") {
  const ComparisonReport r = run_dp_matching_support(Matrix::from_rows({{1, 0}, {0, 2}}), 5.0, 5000);
  CHECK(all_pass(r));
  const ComparisonReport perm =
      run_dp_matching_support(Matrix::from_rows({{0, -1.2, 0}, {0.7, 0, 0}}), 3.0, 3000);
  CHECK(all_pass(perm));

  for (const Matrix& bad : {Matrix(2, 2), Matrix::from_rows({{1, 1}, {0, 0}}),
                            Matrix::from_rows({{1, 0}, {1, 0}})}) {
    try {
      run_dp_matching_support(bad, 1.0, 100);
      FAIL("expected SupportViolation");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SupportViolation);
    }
  }
}

TEST_CASE("early-phase cubic coefficients") {
  const CubicWindow window;
  const ComparisonReport dp = early_phase_gap(DesignKind::DP, Matrix::identity(2), window, 300);
  const double c_dp = fit_early_cubic(dp.times, dp.gap, window);
  CHECK(dp_cubic_target(Matrix::identity(2)) == doctest::Approx(-4.0 / 3.0));
  CHECK(std::abs(c_dp / dp_cubic_target(Matrix::identity(2)) - 1.0) < 0.1);

  Rng rng(44);
  const Matrix t = balanced_teacher(3, 4, rng);
  CHECK(frobenius_sq(t) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(or_cubic_target(t) == doctest::Approx(-0.5).epsilon(1e-14));
  const ComparisonReport orr = early_phase_gap(DesignKind::OR, t, window, 300);
  CHECK(std::abs(fit_early_cubic(orr.times, orr.gap, window) / -0.5 - 1.0) < 0.1);

  const Matrix col = Matrix::from_rows({{0.6}, {0.8}});
  CHECK(or_cubic_target(col) == 0.0);
  const ComparisonReport one = early_phase_gap(DesignKind::OR, col, window, 300);
  CHECK(std::abs(fit_early_cubic(one.times, one.gap, window)) < 1e-6);

  const Vector few_t{0.001, 0.002};
  CHECK_THROWS_AS(fit_early_cubic(few_t, few_t), Error);
}

TEST_CASE("OR vs Standard flow suite") {
  Rng rng(77);
  const Matrix t = balanced_teacher(3, 4, rng);
  const ComparisonReport r = run_thm4(t, 5.0, 5000);
  CHECK(all_pass(r));

  const ComparisonReport one = run_thm4(Matrix::from_rows({{0.6}, {0.8}}), 5.0, 5000);
  CHECK(all_pass(one));

  try {
    run_thm4(Matrix::from_rows({{1, 0}, {0, 2}}), 1.0, 100);
    FAIL("expected UnbalancedTeacher");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnbalancedTeacher);
  }
}

TEST_CASE("theta ODE oracle and matched gap") {
  const Vector l1 = theta_ode_loss(1.0, 0.25, 4, 2.0, 2000);
  CHECK(l1.front() == doctest::Approx(0.5));
  const Vector l4 = theta_ode_loss(4.0, 0.25, 4, 2.0, 2000);
  for (std::size_t k = 1; k < l1.size(); ++k) CHECK(l4[k] < l1[k]);

  Rng rng(5);
  for (int n = 0; n < 100; ++n) {
    ParamState s = random_state(DesignKind::OR, 3, 4, rng);
    s.in_scale = sphere_normalize(s.in_scale);
    Matrix target(3, 4);
    for (double& x : target.data()) x = rng.normal();
    // Rate difference against the Standard state U = V, gamma = beta Norm(alpha).
    Vector gamma = sphere_normalize(s.in_scale);
    for (double& g : gamma) g *= s.magnitude;
    const ParamState f = ParamState::standard(s.weight, gamma);
    const double rate_f = squared_norm(loss_gradient(f, target).flatten());
    const double rate_psi = squared_norm(loss_gradient(s, target).flatten());
    CHECK(or_matched_gap(s, target) == doctest::Approx(rate_psi - rate_f).epsilon(1e-10));
  }
}

TEST_CASE("preconditioner suite") {
  const std::vector<Check> checks = run_preconditioner_suite(3, 4, 20, 9);
  for (const Check& c : checks) {
    CAPTURE(c.name);
    CAPTURE(c.observed);
    CHECK(c.pass);
  }
}
