#include <cmath>

#include "doctest.h"
#include "scalevec/error.hpp"
#include "scalevec/flow.hpp"
#include "scalevec/rng.hpp"
#include "scalevec/sde.hpp"

using namespace scalevec;

TEST_CASE("config validation") {
  SdeConfig c;
  CHECK(resolved(c).a_star == Vector(4, 0.5));
  CHECK(squared_norm(resolved(c).a_star) == 1.0);
  c.dt = 0.02;
  CHECK_THROWS_AS(resolved(c), Error);
  c = SdeConfig{};
  c.lambda = 0.0;
  CHECK_THROWS_AS(resolved(c), Error);
  c = SdeConfig{};
  c.mu = -1.0;
  CHECK_THROWS_AS(resolved(c), Error);
}

TEST_CASE("deterministic limit matches the Standard gradient flow") {
  SdeConfig c;
  c.d = 1;
  c.q = 0.0;
  c.lambda = 1e-300;  // lambda must be positive; this is zero to double precision
  c.mu = 0.0;
  c.a_star = {1.0};
  c.horizon = 5.0;
  c.output_every = 1;
  const SdePath p = euler_maruyama(c, 1);
  // Standard c = 1, d = 1: U plays w, gamma plays gamma.
  const Trajectory tr = integrate(design_flow(DesignKind::Standard, Matrix::from_rows({{1.0}})),
                                  Vector{0.0, 1.0}, 5.0, 5000, IntegrateOptions{true, false});
  double worst = 0.0;
  for (std::size_t k = 0; k < tr.states.size(); ++k) {
    worst = std::max({worst, std::abs(p.w[k][0] - tr.states[k][0]), std::abs(p.gamma[k][0] - tr.states[k][1])});
  }
  CHECK(worst < 5e-3);  // O(dt)
  // s is conserved up to O(dt) per unit time.
  CHECK(std::abs(p.s(p.times.size() - 1)[0] - p.s(0)[0]) < 5.0 * 1e-3 * 5.0);
}

TEST_CASE("paths are reproducible") {
  SdeConfig c;
  c.horizon = 2.0;
  const SdePath a = euler_maruyama(c, 17);
  const SdePath b = euler_maruyama(c, 17);
  CHECK(a.w == b.w);
  CHECK(a.gamma == b.gamma);
  const SdePath other = euler_maruyama(c, 18);
  CHECK(other.w.back() != a.w.back());

  const auto e1 = simulate_ensemble(c, 20, 5);
  const auto e2 = simulate_ensemble(c, 20, 5);
  for (std::size_t k = 0; k < 20; ++k) {
    CHECK(e1[k].seed == 5 + k);
    CHECK(e1[k].gamma == e2[k].gamma);
  }
}

TEST_CASE("Brownian increments have variance q dt") {
  SdeConfig c;
  c.d = 1;
  c.q = 0.04;
  c.lambda = 0.5;
  c.mu = 0.5;
  c.horizon = 100.0;
  c.dt = 1e-3;
  c.output_every = 1;
  const SdePath p = euler_maruyama(c, 3);
  const double aa = resolved(c).a_star[0];
  const std::size_t n = p.times.size() - 1;
  // Remove the drift of each step, then the residual is sqrt(q dt) xi.
  double sum = 0.0, sum_sq = 0.0, sum_4 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double w = p.w[k][0], g = p.gamma[k][0];
    const double drift = -(g * (g * w - aa) + c.lambda * w) * c.dt;
    const double inc = p.w[k + 1][0] - w - drift;
    sum += inc;
    sum_sq += inc * inc;
    sum_4 += inc * inc * inc * inc;
  }
  const double var = sum_sq / double(n);
  const double se = std::sqrt((sum_4 / double(n) - var * var) / double(n));
  CHECK(std::abs(var - c.q * c.dt) <= 3.0 * se);
}

TEST_CASE("divergence is flagged") {
  SdeConfig c;
  c.d = 1;
  c.q = 0.0;
  c.mu = 0.0;
  c.a_star = {0.0};
  c.w0 = {1e7};
  c.gamma0 = {1e7};
  c.horizon = 1.0;
  c.dt = 1e-2;
  const SdePath p = euler_maruyama(c, 1);
  CHECK(p.diverged);
  try {
    euler_maruyama_checked(c, 1);
    FAIL("expected Diverged");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Diverged);
  }
}

TEST_CASE("hessian sharpness") {
  const SharpnessRecord r = hessian_sharpness(Vector{0, 0}, Vector{1, 1}, Vector{1, 1});
  CHECK(r.trace == 2.0);
  CHECK(r.lambda_max == doctest::Approx(1.6180340).epsilon(1e-7));
  CHECK(r.frob == doctest::Approx(2.4494897).epsilon(1e-7));
  CHECK_THROWS_AS(hessian_sharpness(Vector{0}, Vector{1, 1}, Vector{1, 1}), Error);

  // Rank-one block when w = gamma and a* = gamma^2.
  const Vector g{1.5, -0.7};
  const Vector a{2.25, 0.49};
  const Matrix h = assemble_hessian(g, g, a);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto [lo, hi] = sym2_eigvals(h(i, i), h(i, 2 + i), h(2 + i, 2 + i));
    CHECK(std::abs(lo) < 1e-14);
    CHECK(hi == doctest::Approx(2.0 * g[i] * g[i]).epsilon(1e-14));
  }

  Rng rng(2);
  for (int n = 0; n < 100; ++n) {
    Vector w(4), gm(4), as(4);
    for (std::size_t i = 0; i < 4; ++i) {
      w[i] = rng.normal();
      gm[i] = rng.normal();
      as[i] = rng.normal();
    }
    const SharpnessRecord s = hessian_sharpness(w, gm, as);
    const Matrix full = assemble_hessian(w, gm, as);
    CHECK(std::abs(max_eigenvalue(full) - s.lambda_max) < 1e-8);
    CHECK(s.trace == doctest::Approx(squared_norm(w) + squared_norm(gm)).epsilon(1e-15));
    CHECK(s.frob == doctest::Approx(std::sqrt(frobenius_sq(full))).epsilon(1e-14));
    double inf2 = 0.0;
    for (std::size_t i = 0; i < 4; ++i) inf2 = std::max({inf2, w[i] * w[i], gm[i] * gm[i]});
    CHECK(s.lambda_max >= inf2 - 1e-12);
    CHECK(s.lambda_max >= s.trace / 8.0);
  }
}

TEST_CASE("gronwall bound") {
  CHECK(gronwall_bound(0.1, 4, 0.01, 1.0, 0.0, 3.0) == 3.0);
  CHECK(gronwall_bound(0.1, 4, 0.01, 1.0, 1e4, 0.0) == doctest::Approx(2.7).epsilon(1e-12));
  double prev = 0.0;
  for (int k = 1; k < 100; ++k) {
    const double b = gronwall_bound(0.1, 4, 0.01, 1.0, 0.5 * k, 0.0);
    CHECK(b > prev);
    CHECK(b < 2.7);
    prev = b;
  }
}

TEST_CASE("ensemble moments") {
  SdeConfig c;
  c.horizon = 5.0;
  const MomentSeries m = ensemble_moments(c, 32, 1);
  CHECK(m.e_g2.front() == 4.0);
  CHECK(m.e_w2.front() == 0.0);
  CHECK(m.n_paths == 32);
  CHECK(m.diverged == 0);
  CHECK(m.times.size() == 201);
  for (std::size_t k = 0; k < m.times.size(); ++k) {
    CHECK(std::abs(m.trace[k] - (m.e_g2[k] + m.e_w2[k])) <= 1e-12 * m.trace[k]);
  }
  CHECK_THROWS_AS(ensemble_moments(c, 8, 1), Error);
}

TEST_CASE("weight-decay experiment, reduced size") {
  SdeConfig decayed;
  decayed.horizon = 20.0;
  decayed.dt = 2e-3;
  SdeConfig free = decayed;
  free.mu = 0.0;
  free.horizon = 80.0;
  const WdReport r = run_wd_experiment(decayed, free, 64, 1000);
  for (const Check& c : r.checks) {
    CAPTURE(c.name);
    CAPTURE(c.observed);
    CHECK(c.pass);
  }
  SdeConfig other = free;
  other.q = 0.02;
  CHECK_THROWS_AS(run_wd_experiment(decayed, other, 64, 1), Error);
}

TEST_CASE("descent expansion") {
  const Vector w{0.3, -0.2, 0.8, 0.1};
  const Vector g{1.1, 0.9, 0.6, 1.4};
  const Vector a{0.5, 0.5, 0.5, 0.5};

  // sigma = 0: residual is the deterministic Taylor remainder, O(eta^3).
  double prev_ratio = 0.0;
  for (double eta : {1e-2, 5e-3, 2.5e-3}) {
    const DescentExpansion e = sgd_descent_expansion(w, g, a, eta, NoiseModel::Isotropic, 0.0, 10000, 1);
    CHECK(e.stderr_ < 1e-15);
    const double ratio = std::abs(e.residual) / (eta * eta * eta);
    if (prev_ratio > 0.0) CHECK(std::abs(ratio / prev_ratio - 1.0) < 0.05);
    prev_ratio = ratio;
  }

  const DescentExpansion iso = sgd_descent_expansion(w, g, a, 1e-2, NoiseModel::Isotropic, 1.0, 10000, 2);
  double trace = 0.0;
  for (std::size_t i = 0; i < 4; ++i) trace += w[i] * w[i] + g[i] * g[i];
  const DescentExpansion quiet = sgd_descent_expansion(w, g, a, 1e-2, NoiseModel::Isotropic, 0.0, 10000, 2);
  CHECK(iso.predicted - quiet.predicted == doctest::Approx(0.5 * 1e-4 * trace).epsilon(1e-10));

  double prev = std::numeric_limits<double>::infinity();
  for (double eta : {1e-2, 5e-3, 2.5e-3}) {
    const DescentExpansion e = sgd_descent_expansion(w, g, a, eta, NoiseModel::Isotropic, 1.0, 100000, 3);
    const double scaled = std::abs(e.residual) / (eta * eta);
    CHECK(scaled < prev);
    prev = scaled;
  }

  // Aligned noise at a PSD state, rejected at an indefinite one.
  const Vector wa{0.5, 0.5}, ga{0.5, 0.5}, aa{0.25, 0.25};
  CHECK_NOTHROW(sgd_descent_expansion(wa, ga, aa, 1e-2, NoiseModel::HessianAligned, 1.0, 10000, 4));
  try {
    sgd_descent_expansion(w, g, a, 1e-2, NoiseModel::HessianAligned, 1.0, 10000, 4);
    FAIL("expected NonPSDNoise");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPSDNoise);
  }
  CHECK_THROWS_AS(sgd_descent_expansion(w, g, a, 1e-2, NoiseModel::Isotropic, 1.0, 100, 4), Error);
}
