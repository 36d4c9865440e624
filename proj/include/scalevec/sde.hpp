#pragma once

// Weight-decay SDEs for the scalar-output model L = 1/2 sum_i (gamma_i w_i - a*_i)^2:
// Euler-Maruyama paths, ensemble moments, Hessian sharpness and the
// second-order SGD descent expansion.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "scalevec/flow.hpp"
#include "scalevec/linalg.hpp"

namespace scalevec {

struct SdeConfig {
  std::size_t d = 4;
  double lambda = 0.1;  ///< decay on w
  double mu = 0.1;      ///< decay on gamma
  double q = 0.01;      ///< noise intensity eta sigma^2
  Vector a_star;        ///< empty means 1/2 in every coordinate
  double dt = 1e-3;
  double horizon = 50.0;
  /// Steps between recorded states; 0 records 200 evenly spaced intervals.
  std::size_t output_every = 0;
  Vector w0;      ///< empty means 0
  Vector gamma0;  ///< empty means 1
};

/// Fills defaults and checks lambda > 0, mu >= 0, q >= 0, 0 < dt <= 1e-2.
/// Throws ConfigError.
SdeConfig resolved(const SdeConfig& config);

std::size_t sde_steps(const SdeConfig& config);
std::size_t sde_output_every(const SdeConfig& config);

struct SdePath {
  std::uint64_t seed = 0;
  Vector times;
  std::vector<Vector> w;
  std::vector<Vector> gamma;
  /// Per output time and coordinate: sum over earlier steps of w_i^2 dt.
  std::vector<Vector> w2_integral;
  bool diverged = false;
  double diverged_at = 0.0;

  Vector s(std::size_t k) const;  ///< gamma ⊙ gamma - w ⊙ w at output k
};

/// One path. A path whose entries exceed 1e8 in magnitude stops early with
/// diverged = true; use euler_maruyama_checked to get the Diverged error.
SdePath euler_maruyama(const SdeConfig& config, std::uint64_t seed);
SdePath euler_maruyama_checked(const SdeConfig& config, std::uint64_t seed);

struct SharpnessRecord {
  double t = 0.0;
  double lambda_max = 0.0;
  double trace = 0.0;
  double frob = 0.0;
};

/// Block formulas; t is left at zero. Throws DimensionMismatch.
SharpnessRecord hessian_sharpness(std::span<const double> w, std::span<const double> gamma,
                                  std::span<const double> a_star);

/// Full 2d x 2d Hessian, coordinates ordered (w, gamma).
Matrix assemble_hessian(std::span<const double> w, std::span<const double> gamma,
                        std::span<const double> a_star);

/// e^{-2 r t} E0 + (d q + ||a*||^2 / 2) / (2 r) (1 - e^{-2 r t})
double gronwall_bound(double rate, std::size_t d, double q, double a_star_sq, double t, double e0);

/// Paths for seeds base_seed, base_seed + 1, ..., run on worker threads and
/// returned in seed order.
std::vector<SdePath> simulate_ensemble(const SdeConfig& config, std::size_t n_seeds,
                                       std::uint64_t base_seed);

struct MomentSeries {
  Vector times;
  Vector e_w2, e_g2, stderr_w2, stderr_g2;
  std::vector<Vector> e_s;       ///< per time, per coordinate
  std::vector<Vector> stderr_s;  ///< per time, per coordinate
  Vector e_s_mean;               ///< per time, mean over coordinates of E[s_i]
  Vector lambda_max, trace, frob;  ///< seed means of the sharpness metrics
  std::size_t n_paths = 0;
  std::size_t diverged = 0;
};

/// Means over non-diverged paths, accumulated in seed order.
MomentSeries summarize(const std::vector<SdePath>& paths, const SdeConfig& config);

/// simulate_ensemble + summarize. Requires n_seeds >= 16.
MomentSeries ensemble_moments(const SdeConfig& config, std::size_t n_seeds,
                              std::uint64_t base_seed);

struct WdReport {
  SdeConfig decayed;  ///< mu > 0
  SdeConfig free;     ///< mu = 0
  MomentSeries decayed_moments;
  MomentSeries free_moments;
  Vector gamma_bound;       ///< Gronwall bound for E||gamma||^2, decayed run
  Vector w_bound_decayed;   ///< Gronwall bound for E||w||^2
  Vector w_bound_free;
  std::vector<Check> checks;

  bool passed() const;
};

/// Both configs must agree on everything except mu and the horizon.
WdReport run_wd_experiment(const SdeConfig& decayed, const SdeConfig& free, std::size_t n_seeds,
                           std::uint64_t base_seed, std::size_t windows = 20);

enum class NoiseModel { Isotropic, HessianAligned };

struct DescentExpansion {
  double eta = 0.0;
  double measured = 0.0;   ///< Monte-Carlo E L(theta - eta (grad + xi))
  double predicted = 0.0;  ///< Q(theta) + eta^2 / 2 E[xi^T H xi]
  double residual = 0.0;   ///< measured - predicted
  double stderr_ = 0.0;    ///< standard error of measured
};

/// Draws come in antithetic pairs (xi, -xi). The centered quadratic and cubic
/// Taylor terms in xi (known means) are subtracted as control variates; none
/// of this changes the expectation being estimated. The
/// aligned model samples xi = sigma H^{1/2} z from the 2x2 blocks and throws
/// NonPSDNoise if a block has a negative eigenvalue. Requires n_mc >= 1e4.
DescentExpansion sgd_descent_expansion(std::span<const double> w, std::span<const double> gamma,
                                       std::span<const double> a_star, double eta,
                                       NoiseModel noise, double sigma, std::size_t n_mc,
                                       std::uint64_t seed);

}  // namespace scalevec
