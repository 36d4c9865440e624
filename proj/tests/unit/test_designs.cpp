#include <cmath>
#include <variant>

#include "doctest.h"
#include "scalevec/designs.hpp"
#include "scalevec/error.hpp"
#include "scalevec/rng.hpp"

using namespace scalevec;

namespace {

const DesignKind kReparamKinds[] = {DesignKind::NoScale, DesignKind::Standard, DesignKind::AP,
                                    DesignKind::DP,      DesignKind::OR,       DesignKind::ER};

Matrix random_matrix(std::size_t c, std::size_t d, Rng& rng) {
  Matrix m(c, d);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("effective_matrix examples") {
  const ParamState st = ParamState::standard(Matrix::identity(2), {2, 3});
  CHECK(effective_matrix(st) == Matrix::from_rows({{2, 0}, {0, 3}}));

  const ParamState dp = ParamState::dual_placement(Matrix::from_rows({{1, 1}}), {2}, {1, 3});
  CHECK(effective_matrix(dp) == Matrix::from_rows({{2, 6}}));

  Rng rng(1);
  const Matrix v = random_matrix(3, 4, rng);
  const ParamState orr = ParamState::original_reparam(v, Vector(4, 1.0), 1.0);
  CHECK(max_abs_diff(effective_matrix(orr), v) < 1e-15);
  const ParamState er = ParamState::exponential_reparam(v, Vector(4, 0.0), 0.0);
  CHECK(effective_matrix(er) == v);

  CHECK_THROWS_AS(effective_matrix(ParamState::original_reparam(v, Vector(4, 0.0), 1.0)), Error);
  const ParamState dnp = ParamState::initial(DesignKind::DNP, 2, 2);
  try {
    effective_matrix(dnp);
    FAIL("expected NonReparam");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonReparam);
  }
}

TEST_CASE("population_loss") {
  const Matrix t = Matrix::from_rows({{1, 0}, {0, 1}});
  CHECK(population_loss(ParamState::no_scale(t), t) == 0.0);
  CHECK(population_loss(ParamState::initial(DesignKind::Standard, 2, 2), t) == 1.0);
  CHECK_THROWS_AS(population_loss(ParamState::initial(DesignKind::NoScale, 2, 3), t), Error);
}

TEST_CASE("population_loss agrees with sampled sphere inputs") {
  Rng rng(5);
  const std::size_t c = 3, d = 4;
  const ParamState s = random_state(DesignKind::DP, c, d, rng);
  const Matrix t = random_matrix(c, d, rng);
  const Matrix a = effective_matrix(s);
  const std::size_t n = 100000;
  double mean = 0.0, m2 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    Vector x(d);
    for (double& v : x) v = rng.normal();
    const Vector z = sphere_normalize(x);
    double sq = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      double e = 0.0;
      for (std::size_t j = 0; j < d; ++j) e += (a(i, j) - t(i, j)) * z[j];
      sq += e * e;
    }
    const double sample = 0.5 * sq;
    const double delta = sample - mean;
    mean += delta / double(k + 1);
    m2 += delta * (sample - mean);
  }
  const double stderr_ = std::sqrt(m2 / double(n - 1) / double(n));
  CHECK(std::abs(mean - population_loss(s, t)) <= 3.0 * stderr_);
}

TEST_CASE("grad_flow_rhs examples") {
  const Matrix t = Matrix::from_rows({{1, 2}, {3, 4}});
  const ParamState g = grad_flow_rhs(ParamState::initial(DesignKind::NoScale, 2, 2), t);
  CHECK(g.weight == t);
  const ParamState f = grad_flow_rhs(ParamState::initial(DesignKind::Standard, 2, 2), t);
  CHECK(f.weight == t);
  CHECK(f.in_scale == Vector{0, 0});
}

TEST_CASE("OR gradient formulas from the flow equations") {
  Rng rng(9);
  const std::size_t c = 3, d = 4;
  const ParamState s = random_state(DesignKind::OR, c, d, rng);
  const Matrix t = random_matrix(c, d, rng);
  const ParamState rhs = grad_flow_rhs(s, t);
  const Vector q = sphere_normalize(s.in_scale);
  Vector sv(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double gj = s.magnitude * q[j];
    for (std::size_t i = 0; i < c; ++i) {
      const double r = t(i, j) - gj * s.weight(i, j);
      sv[j] += s.weight(i, j) * r;
      CHECK(rhs.weight(i, j) == doctest::Approx(gj * r).epsilon(1e-13));
    }
  }
  CHECK(rhs.magnitude == doctest::Approx(dot(q, sv)).epsilon(1e-13));
  const double an = norm(s.in_scale);
  for (std::size_t k = 0; k < d; ++k) {
    const double proj = sv[k] - s.in_scale[k] * dot(s.in_scale, sv) / (an * an);
    CHECK(rhs.in_scale[k] ==
          doctest::Approx(s.magnitude * std::sqrt(double(d)) / an * proj).epsilon(1e-12));
  }
  // The alpha component along alpha vanishes.
  CHECK(std::abs(dot(rhs.in_scale, s.in_scale)) < 1e-12);
}

TEST_CASE("analytic gradients and Jacobians against central differences") {
  Rng rng(21);
  for (DesignKind kind : kReparamKinds) {
    CAPTURE(to_string(kind));
    double worst_grad = 0.0, worst_jac = 0.0;
    for (int n = 0; n < 100; ++n) {
      const ParamState s = random_state(kind, 3, 4, rng);
      const Matrix t = random_matrix(3, 4, rng);
      worst_grad = std::max(worst_grad, gradient_check(s, t));
      worst_jac = std::max(worst_jac, jacobian_check(s));
    }
    CHECK(worst_grad < 1e-6);
    CHECK(worst_jac < 1e-6);
  }
}

TEST_CASE("reparam_jacobian examples") {
  CHECK(reparam_jacobian(ParamState::initial(DesignKind::NoScale, 2, 3)) == Matrix::identity(6));
  const Matrix j = reparam_jacobian(ParamState::initial(DesignKind::Standard, 2, 3));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(j(i * 3 + k, i * 3 + k) == 1.0);
      CHECK(j(i * 3 + k, 6 + k) == 0.0);
    }
}

TEST_CASE("induced preconditioner") {
  CHECK(induced_preconditioner(ParamState::initial(DesignKind::NoScale, 2, 2)) == Matrix::identity(4));
  CHECK(induced_preconditioner(ParamState::initial(DesignKind::Standard, 2, 3)) == Matrix::identity(6));

  // Standard: column blocks gamma_j^2 I + u_j u_j^T.
  Rng rng(4);
  const ParamState s = random_state(DesignKind::Standard, 2, 3, rng);
  const Matrix p = induced_preconditioner(s);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t l = 0; l < 3; ++l) {
          const double expected =
              j == l ? (i == k ? s.in_scale[j] * s.in_scale[j] : 0.0) + s.weight(i, j) * s.weight(k, j)
                     : 0.0;
          CHECK(p(i * 3 + j, k * 3 + l) == doctest::Approx(expected).epsilon(1e-14));
        }

  for (DesignKind kind : kReparamKinds) {
    for (int n = 0; n < 100; ++n) {
      const Matrix pk = induced_preconditioner(random_state(kind, 2, 3, rng));
      CHECK(max_asymmetry(pk) < 1e-12);
      CHECK(min_eigenvalue(pk) >= -1e-10);
    }
  }
}

TEST_CASE("OR scale preconditioner") {
  const Matrix p3 = or_scale_preconditioner(1.0, Vector(3, 1.0));
  CHECK(max_eigenvalue(p3) == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(min_eigenvalue(p3) == doctest::Approx(1.0).epsilon(1e-10));

  const Matrix p9 = or_scale_preconditioner(2.0, Vector(9, 1.0));
  CHECK(max_eigenvalue(p9) == doctest::Approx(9.0).epsilon(1e-10));
  CHECK(min_eigenvalue(p9) == doctest::Approx(4.0).epsilon(1e-10));

  // d gamma_hat gamma_hat^T + beta^2 (I - gamma_hat gamma_hat^T) on the sphere.
  Rng rng(12);
  Vector alpha(5);
  for (double& x : alpha) x = rng.normal();
  alpha = sphere_normalize(alpha);
  const double beta = 1.7;
  const Matrix p = or_scale_preconditioner(beta, alpha);
  Matrix other(5, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const double gh = alpha[i] * alpha[j] / 5.0;
      other(i, j) = 5.0 * gh + beta * beta * ((i == j ? 1.0 : 0.0) - gh);
    }
  CHECK(max_abs_diff(p, other) < 1e-12);

  CHECK_THROWS_AS(or_scale_preconditioner(0.0, alpha), Error);
  CHECK_THROWS_AS(or_scale_preconditioner(1.0, Vector(3, 0.0)), Error);
}

TEST_CASE("unified factors") {
  const ParamState st = ParamState::standard(Matrix::identity(2), {2, 3});
  const auto f = std::get<UnifiedFactors>(unified_factors(st));
  CHECK(f.u == Vector{1, 1});
  CHECK(f.v == Vector{2, 3});

  Rng rng(8);
  const ParamState dp = random_state(DesignKind::DP, 2, 3, rng);
  const auto g = std::get<UnifiedFactors>(unified_factors(dp));
  CHECK(g.u == dp.out_scale);
  CHECK(g.v == dp.in_scale);

  CHECK(std::holds_alternative<NonReparam>(unified_factors(ParamState::initial(DesignKind::DNP, 2, 2))));

  for (DesignKind kind : kReparamKinds) {
    for (int n = 0; n < 100; ++n) {
      const ParamState s = random_state(kind, 3, 4, rng);
      const Matrix a = effective_matrix(s);
      const Matrix b = apply_unified(s.weight, std::get<UnifiedFactors>(unified_factors(s)));
      double scale = 1.0;
      for (double x : a.data()) scale = std::max(scale, std::abs(x));
      CHECK(max_abs_diff(a, b) <= 1e-15 * scale);
    }
  }

  std::vector<ParamState> branches;
  for (int b = 0; b < 3; ++b) branches.push_back(random_state(DesignKind::Standard, 2, 4, rng));
  const auto hg = hg_unified_factors(branches);
  REQUIRE(hg.size() == 3);
  for (int b = 0; b < 3; ++b) CHECK(hg[b].v == branches[b].in_scale);
}

TEST_CASE("absorb") {
  Rng rng(2);
  const Matrix w = random_matrix(3, 4, rng);
  CHECK(absorb(w, Vector(4, 1.0)) == w);
  CHECK(absorb(Matrix::from_rows({{1, 2}}), Vector{3, 4}) == Matrix::from_rows({{3, 8}}));
  CHECK_THROWS_AS(absorb(w, Vector(3, 1.0)), Error);
  for (int n = 0; n < 100; ++n) {
    const Matrix wn = random_matrix(3, 4, rng);
    Vector gamma(4), x(4);
    for (double& v : gamma) v = rng.normal();
    for (double& v : x) v = rng.normal();
    const Vector lhs = matvec(absorb(wn, gamma), sphere_normalize(x));
    const Vector rhs = matvec(wn, rms_norm(x, gamma));
    CHECK(max_abs_diff(lhs, rhs) < 1e-13);
  }
}

TEST_CASE("initialization preserves the function") {
  Rng rng(6);
  const Matrix w = random_matrix(3, 5, rng);
  CHECK(effective_matrix(ParamState::standard(w, Vector(5, 1.0))) == w);
  CHECK(max_abs_diff(effective_matrix(ParamState::original_reparam(w, Vector(5, 1.0), 1.0)), w) < 1e-15);
  CHECK(effective_matrix(ParamState::exponential_reparam(w, Vector(5, 0.0), 0.0)) == w);
}

TEST_CASE("flatten round trip and names") {
  Rng rng(10);
  for (DesignKind kind : kReparamKinds) {
    const ParamState s = random_state(kind, 2, 3, rng);
    const Vector flat = s.flatten();
    CHECK(flat.size() == raw_size(kind, 2, 3));
    CHECK(ParamState::unflatten(kind, 2, 3, flat).flatten() == flat);
    CHECK(s.raw_names().size() == flat.size());
  }
  CHECK(ParamState::initial(DesignKind::OR, 1, 2).raw_names().back() == "beta");
  CHECK_THROWS_AS(ParamState::unflatten(DesignKind::DP, 2, 3, Vector(3)), Error);
  CHECK(design_from_string("dp") == DesignKind::DP);
  CHECK_THROWS_AS(design_from_string("xx"), Error);
}
