#include "scalevec/sde.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "scalevec/error.hpp"
#include "scalevec/rng.hpp"

namespace scalevec {

namespace {

constexpr double kDivergence = 1e8;

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, x.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0};
}

void require_dims(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) throw Error(ErrorCode::DimensionMismatch, "w, gamma and a* must share a dimension");
}

double loss(std::span<const double> w, std::span<const double> g, std::span<const double> a) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double r = g[i] * w[i] - a[i];
    s += r * r;
  }
  return 0.5 * s;
}

std::vector<const SdePath*> live(const std::vector<SdePath>& paths) {
  std::vector<const SdePath*> out;
  for (const auto& p : paths)
    if (!p.diverged) out.push_back(&p);
  return out;
}

}  // namespace

SdeConfig resolved(const SdeConfig& config) {
  SdeConfig c = config;
  if (c.d == 0) throw Error(ErrorCode::ConfigError, "d must be positive");
  if (!(c.lambda > 0.0)) throw Error(ErrorCode::ConfigError, "lambda must be positive");
  if (!(c.mu >= 0.0)) throw Error(ErrorCode::ConfigError, "mu must be non-negative");
  if (!(c.q >= 0.0)) throw Error(ErrorCode::ConfigError, "q must be non-negative");
  if (!(c.dt > 0.0) || c.dt > 1e-2) throw Error(ErrorCode::ConfigError, "dt must lie in (0, 1e-2]");
  if (!(c.horizon > 0.0)) throw Error(ErrorCode::ConfigError, "T must be positive");
  if (c.a_star.empty()) c.a_star.assign(c.d, 0.5);
  if (c.w0.empty()) c.w0.assign(c.d, 0.0);
  if (c.gamma0.empty()) c.gamma0.assign(c.d, 1.0);
  if (c.a_star.size() != c.d || c.w0.size() != c.d || c.gamma0.size() != c.d) {
    throw Error(ErrorCode::ConfigError, "a_star, w0 and gamma0 must have d entries");
  }
  return c;
}

std::size_t sde_steps(const SdeConfig& config) {
  return static_cast<std::size_t>(std::llround(config.horizon / config.dt));
}

std::size_t sde_output_every(const SdeConfig& config) {
  if (config.output_every > 0) return config.output_every;
  return std::max<std::size_t>(1, sde_steps(config) / 200);
}

Vector SdePath::s(std::size_t k) const {
  Vector out(w[k].size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gamma[k][i] * gamma[k][i] - w[k][i] * w[k][i];
  return out;
}

SdePath euler_maruyama(const SdeConfig& config, std::uint64_t seed) {
  const SdeConfig c = resolved(config);
  const std::size_t d = c.d;
  const std::size_t steps = sde_steps(c);
  const std::size_t every = sde_output_every(c);
  const double noise = std::sqrt(c.q * c.dt);

  Rng rng(seed);
  SdePath path;
  path.seed = seed;
  Vector w = c.w0;
  Vector g = c.gamma0;
  Vector integral(d, 0.0);
  Vector grad(d);
  Vector xi_w(d), xi_g(d);

  auto record = [&](std::size_t k) {
    path.times.push_back(static_cast<double>(k) * c.dt);
    path.w.push_back(w);
    path.gamma.push_back(g);
    path.w2_integral.push_back(integral);
  };
  record(0);

  for (std::size_t k = 1; k <= steps; ++k) {
    for (double& x : xi_w) x = rng.normal();
    for (double& x : xi_g) x = rng.normal();
    bool blown = false;
    for (std::size_t i = 0; i < d; ++i) {
      grad[i] = g[i] * w[i] - c.a_star[i];
      integral[i] += w[i] * w[i] * c.dt;
      const double wn = w[i] - (g[i] * grad[i] + c.lambda * w[i]) * c.dt + noise * xi_w[i];
      const double gn = g[i] - (w[i] * grad[i] + c.mu * g[i]) * c.dt + noise * xi_g[i];
      w[i] = wn;
      g[i] = gn;
      blown |= !(std::abs(wn) <= kDivergence) || !(std::abs(gn) <= kDivergence);
    }
    if (blown) {
      path.diverged = true;
      path.diverged_at = static_cast<double>(k) * c.dt;
      return path;
    }
    if (k % every == 0 || k == steps) record(k);
  }
  return path;
}

SdePath euler_maruyama_checked(const SdeConfig& config, std::uint64_t seed) {
  SdePath p = euler_maruyama(config, seed);
  if (p.diverged) {
    throw Error(ErrorCode::Diverged, "seed " + std::to_string(seed) + " diverged at t = " +
                                         std::to_string(p.diverged_at));
  }
  return p;
}

SharpnessRecord hessian_sharpness(std::span<const double> w, std::span<const double> gamma,
                                  std::span<const double> a_star) {
  require_dims(w.size(), gamma.size(), a_star.size());
  SharpnessRecord r;
  r.lambda_max = -std::numeric_limits<double>::infinity();
  double frob2 = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double g2 = gamma[i] * gamma[i];
    const double w2 = w[i] * w[i];
    const double off = 2.0 * gamma[i] * w[i] - a_star[i];
    r.lambda_max = std::max(r.lambda_max, sym2_eigvals(g2, off, w2).second);
    r.trace += g2 + w2;
    frob2 += g2 * g2 + w2 * w2 + 2.0 * off * off;
  }
  r.frob = std::sqrt(frob2);
  return r;
}

Matrix assemble_hessian(std::span<const double> w, std::span<const double> gamma,
                        std::span<const double> a_star) {
  require_dims(w.size(), gamma.size(), a_star.size());
  const std::size_t d = w.size();
  Matrix h(2 * d, 2 * d);
  for (std::size_t i = 0; i < d; ++i) {
    const double off = 2.0 * gamma[i] * w[i] - a_star[i];
    h(i, i) = gamma[i] * gamma[i];
    h(d + i, d + i) = w[i] * w[i];
    h(i, d + i) = off;
    h(d + i, i) = off;
  }
  return h;
}

double gronwall_bound(double rate, std::size_t d, double q, double a_star_sq, double t, double e0) {
  const double decay = std::exp(-2.0 * rate * t);
  const double asymptote = (static_cast<double>(d) * q + 0.5 * a_star_sq) / (2.0 * rate);
  return decay * e0 + asymptote * (1.0 - decay);
}

std::vector<SdePath> simulate_ensemble(const SdeConfig& config, std::size_t n_seeds,
                                       std::uint64_t base_seed) {
  const SdeConfig c = resolved(config);
  std::vector<SdePath> paths(n_seeds);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < n_seeds; k = next++) paths[k] = euler_maruyama(c, base_seed + k);
  };
  const std::size_t n_threads =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(n_seeds, 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return paths;
}

MomentSeries summarize(const std::vector<SdePath>& paths, const SdeConfig& config) {
  const SdeConfig c = resolved(config);
  const auto ok = live(paths);
  MomentSeries m;
  m.n_paths = ok.size();
  m.diverged = paths.size() - ok.size();
  if (ok.empty()) return m;

  const std::size_t n_times = ok.front()->times.size();
  const std::size_t d = c.d;
  m.times = ok.front()->times;
  Vector buf_w(ok.size()), buf_g(ok.size()), buf_s(ok.size());
  Vector buf_l(ok.size()), buf_t(ok.size()), buf_f(ok.size());
  for (std::size_t k = 0; k < n_times; ++k) {
    for (std::size_t p = 0; p < ok.size(); ++p) {
      buf_w[p] = squared_norm(ok[p]->w[k]);
      buf_g[p] = squared_norm(ok[p]->gamma[k]);
      const SharpnessRecord r = hessian_sharpness(ok[p]->w[k], ok[p]->gamma[k], c.a_star);
      buf_l[p] = r.lambda_max;
      buf_t[p] = r.trace;
      buf_f[p] = r.frob;
    }
    const MeanSe w2 = mean_se(buf_w);
    const MeanSe g2 = mean_se(buf_g);
    m.e_w2.push_back(w2.mean);
    m.stderr_w2.push_back(w2.se);
    m.e_g2.push_back(g2.mean);
    m.stderr_g2.push_back(g2.se);
    m.lambda_max.push_back(mean_se(buf_l).mean);
    m.trace.push_back(mean_se(buf_t).mean);
    m.frob.push_back(mean_se(buf_f).mean);

    Vector es(d), ses(d);
    double s_mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t p = 0; p < ok.size(); ++p) {
        const double g = ok[p]->gamma[k][i];
        const double w = ok[p]->w[k][i];
        buf_s[p] = g * g - w * w;
      }
      const MeanSe s = mean_se(buf_s);
      es[i] = s.mean;
      ses[i] = s.se;
      s_mean += s.mean;
    }
    m.e_s.push_back(std::move(es));
    m.stderr_s.push_back(std::move(ses));
    m.e_s_mean.push_back(s_mean / static_cast<double>(d));
  }
  return m;
}

MomentSeries ensemble_moments(const SdeConfig& config, std::size_t n_seeds,
                              std::uint64_t base_seed) {
  if (n_seeds < 16) throw Error(ErrorCode::ConfigError, "ensembles need at least 16 seeds");
  return summarize(simulate_ensemble(config, n_seeds, base_seed), config);
}

bool WdReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

WdReport run_wd_experiment(const SdeConfig& decayed_in, const SdeConfig& free_in,
                           std::size_t n_seeds, std::uint64_t base_seed, std::size_t windows) {
  if (n_seeds < 16) throw Error(ErrorCode::ConfigError, "ensembles need at least 16 seeds");
  WdReport rep;
  rep.decayed = resolved(decayed_in);
  rep.free = resolved(free_in);
  const SdeConfig& a = rep.decayed;
  const SdeConfig& b = rep.free;
  if (!(a.mu > 0.0) || b.mu != 0.0) {
    throw Error(ErrorCode::ConfigError, "wd experiment needs mu > 0 and mu = 0 runs");
  }
  if (a.d != b.d || a.lambda != b.lambda || a.q != b.q || a.dt != b.dt || a.a_star != b.a_star ||
      a.w0 != b.w0 || a.gamma0 != b.gamma0) {
    throw Error(ErrorCode::ConfigError, "wd configs may differ only in mu and horizon");
  }
  const double a_sq = squared_norm(a.a_star);

  const std::vector<SdePath> decayed_paths = simulate_ensemble(a, n_seeds, base_seed);
  const std::vector<SdePath> free_paths = simulate_ensemble(b, n_seeds, base_seed);
  rep.decayed_moments = summarize(decayed_paths, a);
  rep.free_moments = summarize(free_paths, b);
  const MomentSeries& md = rep.decayed_moments;
  const MomentSeries& mf = rep.free_moments;
  if (md.n_paths < 2 || mf.n_paths < 2) {
    throw Error(ErrorCode::Diverged, "too few non-diverged paths to form moments");
  }

  // (a) E||gamma||^2 stays under its Gronwall bound when mu > 0.
  const double g0 = squared_norm(a.gamma0);
  const double w0 = squared_norm(a.w0);
  double gamma_excess = -std::numeric_limits<double>::infinity();
  double w_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < md.times.size(); ++k) {
    const double t = md.times[k];
    rep.gamma_bound.push_back(gronwall_bound(a.mu, a.d, a.q, a_sq, t, g0));
    rep.w_bound_decayed.push_back(gronwall_bound(a.lambda, a.d, a.q, a_sq, t, w0));
    gamma_excess = std::max(gamma_excess, md.e_g2[k] - rep.gamma_bound[k] - 3.0 * md.stderr_g2[k]);
    w_excess = std::max(w_excess, md.e_w2[k] - rep.w_bound_decayed[k] - 3.0 * md.stderr_w2[k]);
  }
  rep.checks.push_back(check_at_most("gamma_gronwall_decayed", gamma_excess, 0.0));
  rep.checks.push_back(check_at_most("w_gronwall_decayed", w_excess, 0.0));

  double w_excess_free = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < mf.times.size(); ++k) {
    rep.w_bound_free.push_back(gronwall_bound(b.lambda, b.d, b.q, a_sq, mf.times[k], w0));
    w_excess_free = std::max(w_excess_free, mf.e_w2[k] - rep.w_bound_free[k] - 3.0 * mf.stderr_w2[k]);
  }
  rep.checks.push_back(check_at_most("w_gronwall_free", w_excess_free, 0.0));

  // (b) mu = 0: per-path paired differences over coarse windows.
  const auto ok = live(free_paths);
  const std::size_t last = mf.times.size() - 1;
  const std::size_t n_win = std::clamp<std::size_t>(windows, 1, last);
  std::vector<std::size_t> edges;
  for (std::size_t w = 0; w <= n_win; ++w) edges.push_back(w * last / n_win);

  Vector buf(ok.size());
  double worst_monotone = std::numeric_limits<double>::infinity();
  double worst_drift_z = 0.0;
  for (std::size_t w = 0; w < n_win; ++w) {
    const std::size_t k0 = edges[w];
    const std::size_t k1 = edges[w + 1];
    for (std::size_t i = 0; i < b.d; ++i) {
      for (std::size_t p = 0; p < ok.size(); ++p) buf[p] = ok[p]->s(k1)[i] - ok[p]->s(k0)[i];
      const MeanSe inc = mean_se(buf);
      worst_monotone = std::min(worst_monotone, inc.mean + 3.0 * inc.se);
    }
    // Ito drift identity ds = 2 (lambda w^2 - mu gamma^2) dt, summed over coordinates.
    for (std::size_t p = 0; p < ok.size(); ++p) {
      double v = 0.0;
      const Vector s1 = ok[p]->s(k1);
      const Vector s0 = ok[p]->s(k0);
      for (std::size_t i = 0; i < b.d; ++i) {
        v += s1[i] - s0[i] -
             2.0 * b.lambda * (ok[p]->w2_integral[k1][i] - ok[p]->w2_integral[k0][i]);
      }
      buf[p] = v;
    }
    const MeanSe resid = mean_se(buf);
    worst_drift_z = std::max(worst_drift_z, std::abs(resid.mean) / resid.se);
  }
  rep.checks.push_back(check_at_least("s_nondecreasing_free", worst_monotone, 0.0));
  rep.checks.push_back(check_at_most("s_drift_identity_free_z", worst_drift_z, 3.0));

  // Growth between T/4 and T, paired per path.
  const std::size_t quarter = static_cast<std::size_t>(
      std::lower_bound(mf.times.begin(), mf.times.end(), 0.25 * b.horizon - 0.5 * b.dt) -
      mf.times.begin());
  auto growth = [&](auto metric) {
    for (std::size_t p = 0; p < ok.size(); ++p) buf[p] = metric(*ok[p], last) - metric(*ok[p], quarter);
    const MeanSe m = mean_se(buf);
    return m.mean - 3.0 * m.se;
  };
  rep.checks.push_back(check_at_least("gamma_growth_free", growth([](const SdePath& p, std::size_t k) {
                                        return squared_norm(p.gamma[k]);
                                      }), 0.0));
  const Vector& astar = b.a_star;
  rep.checks.push_back(check_at_least("lambda_max_growth_free", growth([&](const SdePath& p, std::size_t k) {
                                        return hessian_sharpness(p.w[k], p.gamma[k], astar).lambda_max;
                                      }), 0.0));
  rep.checks.push_back(check_at_least("trace_growth_free", growth([&](const SdePath& p, std::size_t k) {
                                        return hessian_sharpness(p.w[k], p.gamma[k], astar).trace;
                                      }), 0.0));
  rep.checks.push_back(check_at_least("frob_growth_free", growth([&](const SdePath& p, std::size_t k) {
                                        return hessian_sharpness(p.w[k], p.gamma[k], astar).frob;
                                      }), 0.0));

  // (c) mean trace equals E||gamma||^2 + E||w||^2.
  double trace_dev = 0.0;
  for (const MomentSeries* m : {&md, &mf}) {
    for (std::size_t k = 0; k < m->times.size(); ++k) {
      const double expect = m->e_g2[k] + m->e_w2[k];
      trace_dev = std::max(trace_dev, std::abs(m->trace[k] - expect) / expect);
    }
  }
  rep.checks.push_back(check_at_most("trace_identity", trace_dev, 1e-12));
  return rep;
}

DescentExpansion sgd_descent_expansion(std::span<const double> w, std::span<const double> gamma,
                                       std::span<const double> a_star, double eta,
                                       NoiseModel noise, double sigma, std::size_t n_mc,
                                       std::uint64_t seed) {
  require_dims(w.size(), gamma.size(), a_star.size());
  if (!(eta > 0.0)) throw Error(ErrorCode::ConfigError, "eta must be positive");
  if (n_mc < 10000) throw Error(ErrorCode::ConfigError, "n_mc must be at least 1e4");
  const std::size_t d = w.size();

  // Per-coordinate gradient, Hessian block and its square root.
  Vector gw(d), gg(d), h11(d), h12(d), h22(d), r11(d), r12(d), r22(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double r = gamma[i] * w[i] - a_star[i];
    gw[i] = gamma[i] * r;
    gg[i] = w[i] * r;
    h11[i] = gamma[i] * gamma[i];
    h22[i] = w[i] * w[i];
    h12[i] = 2.0 * gamma[i] * w[i] - a_star[i];
    if (noise == NoiseModel::HessianAligned) {
      const auto [lo, hi] = sym2_eigvals(h11[i], h12[i], h22[i]);
      if (lo < -1e-14 * std::max(1.0, std::abs(hi))) {
        throw Error(ErrorCode::NonPSDNoise, "Hessian block " + std::to_string(i) +
                                                " has eigenvalue " + std::to_string(lo));
      }
      const double root_det = std::sqrt(std::max(0.0, h11[i] * h22[i] - h12[i] * h12[i]));
      const double denom = std::sqrt(h11[i] + h22[i] + 2.0 * root_det);
      if (denom > 0.0) {
        r11[i] = (h11[i] + root_det) / denom;
        r12[i] = h12[i] / denom;
        r22[i] = (h22[i] + root_det) / denom;
      }
    }
  }

  double grad_sq = 0.0, curvature = 0.0, trace = 0.0, frob2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    grad_sq += gw[i] * gw[i] + gg[i] * gg[i];
    curvature += h11[i] * gw[i] * gw[i] + 2.0 * h12[i] * gw[i] * gg[i] + h22[i] * gg[i] * gg[i];
    trace += h11[i] + h22[i];
    frob2 += h11[i] * h11[i] + h22[i] * h22[i] + 2.0 * h12[i] * h12[i];
  }
  const double noise_quad = sigma * sigma * (noise == NoiseModel::Isotropic ? trace : frob2);

  // Noise covariance blocks and the mean of the cubic term 3 T[grad, xi, xi],
  // where T[v,v,v] = sum_i 6 gamma_i vw_i^2 vg_i + 6 w_i vw_i vg_i^2.
  const double s2 = sigma * sigma;
  double cubic_mean = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double c11 = noise == NoiseModel::Isotropic ? s2 : s2 * h11[i];
    const double c12 = noise == NoiseModel::Isotropic ? 0.0 : s2 * h12[i];
    const double c22 = noise == NoiseModel::Isotropic ? s2 : s2 * h22[i];
    cubic_mean += 6.0 * gamma[i] * (gg[i] * c11 + 2.0 * gw[i] * c12) +
                  6.0 * w[i] * (gw[i] * c22 + 2.0 * gg[i] * c12);
  }
  const double l0 = loss(w, gamma, a_star);

  DescentExpansion out;
  out.eta = eta;
  out.predicted = l0 - eta * grad_sq + 0.5 * eta * eta * (curvature + noise_quad);

  Rng rng(seed);
  Vector xw(d), xg(d), wp(d), gp(d), wm(d), gm(d);
  Vector samples(n_mc);
  for (std::size_t n = 0; n < n_mc; ++n) {
    double quad = 0.0;
    double cubic = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double z1 = rng.normal();
      const double z2 = rng.normal();
      if (noise == NoiseModel::Isotropic) {
        xw[i] = sigma * z1;
        xg[i] = sigma * z2;
      } else {
        xw[i] = sigma * (r11[i] * z1 + r12[i] * z2);
        xg[i] = sigma * (r12[i] * z1 + r22[i] * z2);
      }
      quad += h11[i] * xw[i] * xw[i] + 2.0 * h12[i] * xw[i] * xg[i] + h22[i] * xg[i] * xg[i];
      cubic += 6.0 * gamma[i] * (gg[i] * xw[i] * xw[i] + 2.0 * gw[i] * xw[i] * xg[i]) +
               6.0 * w[i] * (gw[i] * xg[i] * xg[i] + 2.0 * gg[i] * xw[i] * xg[i]);
      wp[i] = w[i] - eta * (gw[i] + xw[i]);
      gp[i] = gamma[i] - eta * (gg[i] + xg[i]);
      wm[i] = w[i] - eta * (gw[i] - xw[i]);
      gm[i] = gamma[i] - eta * (gg[i] - xg[i]);
    }
    samples[n] = 0.5 * (loss(wp, gp, a_star) + loss(wm, gm, a_star)) -
                 0.5 * eta * eta * (quad - noise_quad) +
                 eta * eta * eta / 6.0 * (cubic - cubic_mean);
  }
  const MeanSe m = mean_se(samples);
  out.measured = m.mean;
  out.stderr_ = m.se;
  out.residual = out.measured - out.predicted;
  return out;
}

}  // namespace scalevec
