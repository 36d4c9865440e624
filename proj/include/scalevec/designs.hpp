#pragma once

// Scale-vector parameterizations of a single c x d linear map acting on
// sphere-normalized inputs. Every design is a map from raw parameters to the
// effective matrix A; with isotropic inputs the population loss is
// 1/2 ||A - W*||_F^2, so the whole analysis reduces to finite-dimensional
// matrix calculus.
//
// Raw-parameter order (used by flatten, reparam_jacobian and the flow
// integrator): matrix entries row-major, then scale vectors in declaration
// order, then scalars.
//
//   NoScale   W (c x d)
//   Standard  U (c x d), gamma (d)
//   AP        W (c x d), gamma_a (c)
//   DP        M (c x d), gamma_a (c), gamma_b (d)
//   DNP       M (c x d), gamma_a (c), gamma_b (d)   (not a reparameterization)
//   OR        V (c x d), alpha (d), beta
//   ER        W (c x d), alpha (d), beta

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "scalevec/linalg.hpp"

namespace scalevec {

class Rng;

enum class DesignKind { NoScale, Standard, AP, DP, DNP, OR, ER };

std::string_view to_string(DesignKind kind) noexcept;
DesignKind design_from_string(std::string_view name);

/// Raw parameters of one student. Fields unused by a kind stay empty.
struct ParamState {
  DesignKind kind = DesignKind::NoScale;
  Matrix weight;    ///< W_g, U, W, M or V depending on kind
  Vector out_scale; ///< gamma_a (AP, DP, DNP)
  Vector in_scale;  ///< gamma (Standard), gamma_b (DP, DNP), alpha (OR, ER)
  double magnitude = 0.0;  ///< beta (OR, ER)

  std::size_t rows() const noexcept { return weight.rows(); }
  std::size_t cols() const noexcept { return weight.cols(); }

  static ParamState no_scale(Matrix w);
  static ParamState standard(Matrix u, Vector gamma);
  static ParamState after_placement(Matrix w, Vector gamma_a);
  static ParamState dual_placement(Matrix m, Vector gamma_a, Vector gamma_b);
  static ParamState dual_normalized(Matrix m, Vector gamma_a, Vector gamma_b);
  static ParamState original_reparam(Matrix v, Vector alpha, double beta);
  static ParamState exponential_reparam(Matrix w, Vector alpha, double beta);

  /// Zero matrix with unit scales (alpha = 1, beta = 1 for OR; alpha = 0,
  /// beta = 0 for ER), so every design starts from A = 0.
  static ParamState initial(DesignKind kind, std::size_t c, std::size_t d);

  std::size_t raw_size() const noexcept;
  Vector flatten() const;
  /// Inverse of flatten(); DimensionMismatch when the length is wrong.
  static ParamState unflatten(DesignKind kind, std::size_t c, std::size_t d,
                              std::span<const double> raw);
  /// Names of the flattened coordinates, e.g. "W[0,1]", "gamma_a[2]", "beta".
  std::vector<std::string> raw_names() const;
};

/// Raw-parameter count of a kind at the given shape.
std::size_t raw_size(DesignKind kind, std::size_t c, std::size_t d) noexcept;

/// A = Phi(q). Throws NonReparam for DNP and ZeroVector for OR with alpha = 0.
Matrix effective_matrix(const ParamState& state);

/// 1/2 ||A - W*||_F^2.
double population_loss(const ParamState& state, const Matrix& target);

/// Gradient of population_loss with respect to the raw parameters.
ParamState loss_gradient(const ParamState& state, const Matrix& target);

/// Negative gradient: the gradient-flow velocity.
ParamState grad_flow_rhs(const ParamState& state, const Matrix& target);

/// dPhi/dq: rows index A row-major, columns index the raw parameters.
Matrix reparam_jacobian(const ParamState& state);

/// P = J J^T in effective-matrix coordinates.
Matrix induced_preconditioner(const ParamState& state);

/// Preconditioner acting on gamma = beta Norm(alpha) under the OR flow:
/// q q^T + rho (I - q q^T / d) with rho = beta^2 d / ||alpha||^2.
/// On the sphere ||alpha|| = sqrt(d) this is q q^T + beta^2 (I - q q^T / d).
Matrix or_scale_preconditioner(double beta, std::span<const double> alpha);

/// rho = beta^2 d / ||alpha||^2, the orthogonal-direction gain of OR.
double or_rho(double beta, std::span<const double> alpha);

/// Factors of the unified form A = W ⊙ (u v^T).
struct UnifiedFactors {
  Vector u;
  Vector v;
};
/// Marker for designs that insert a normalization instead of reparameterizing.
struct NonReparam {};

std::variant<UnifiedFactors, NonReparam> unified_factors(const ParamState& state);

/// Heterogeneous scale vectors: one Standard design per branch sharing the
/// input. Returns the per-branch factors (1, gamma_c).
std::vector<UnifiedFactors> hg_unified_factors(const std::vector<ParamState>& branches);

/// W ⊙ (u v^T).
Matrix apply_unified(const Matrix& w, const UnifiedFactors& f);

/// W diag(gamma): folds an input-side scale vector into the following map.
Matrix absorb(const Matrix& w, std::span<const double> gamma);

/// Quantities conserved by gradient flow from the standard initialization.
///   Standard  gamma_j^2 - ||u_j||^2                       (d values)
///   AP        gamma_a_i^2 - ||W_i:||^2                     (c values)
///   DP        gamma_a_i^2 - ||M_i:||^2, gamma_b_j^2 - ||M_:j||^2
///   OR        beta^2 - ||V||_F^2, ||alpha||
///   ER        ||W||_F^2 - 2 beta, sum(alpha)
///   NoScale   none
Vector conserved_quantities(const ParamState& state);

/// Random state for property checks: matrix entries N(0, 1/4); scales
/// N(1, 1/4) for gamma-type vectors; OR alpha N(0, 1), beta N(1, 1/4);
/// ER alpha and beta N(0, 1/4).
ParamState random_state(DesignKind kind, std::size_t c, std::size_t d, Rng& rng);

/// max |analytic - central difference| / max(max |analytic|, 1e-12) for the
/// loss gradient at h.
double gradient_check(const ParamState& state, const Matrix& target, double h = 1e-5);
/// Same measure for reparam_jacobian.
double jacobian_check(const ParamState& state, double h = 1e-5);

}  // namespace scalevec
