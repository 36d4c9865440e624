#include "scalevec/designs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scalevec/error.hpp"
#include "scalevec/rng.hpp"

namespace scalevec {

namespace {

bool has_out_scale(DesignKind k) {
  return k == DesignKind::AP || k == DesignKind::DP || k == DesignKind::DNP;
}
bool has_in_scale(DesignKind k) {
  return k == DesignKind::Standard || k == DesignKind::DP || k == DesignKind::DNP ||
         k == DesignKind::OR || k == DesignKind::ER;
}
bool has_magnitude(DesignKind k) { return k == DesignKind::OR || k == DesignKind::ER; }

void check_len(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + " has length " +
                                                  std::to_string(got) + ", expected " +
                                                  std::to_string(want));
  }
}

void validate(const ParamState& s) {
  const std::size_t c = s.rows();
  const std::size_t d = s.cols();
  check_len(s.out_scale.size(), has_out_scale(s.kind) ? c : 0, "output-side scale vector");
  check_len(s.in_scale.size(), has_in_scale(s.kind) ? d : 0, "input-side scale vector");
}

void reject_dnp(const ParamState& s, const char* op) {
  if (s.kind == DesignKind::DNP) {
    throw Error(ErrorCode::NonReparam,
                std::string(op) + ": DNP inserts a normalization and has no effective matrix");
  }
}

Vector ones(std::size_t n) { return Vector(n, 1.0); }

Vector er_scale(std::span<const double> alpha, double beta) {
  const double mean =
      std::accumulate(alpha.begin(), alpha.end(), 0.0) / static_cast<double>(alpha.size());
  Vector v(alpha.size());
  for (std::size_t j = 0; j < alpha.size(); ++j) v[j] = std::exp(beta + alpha[j] - mean);
  return v;
}

Vector or_scale(std::span<const double> alpha, double beta) {
  Vector q = sphere_normalize(alpha);
  for (double& x : q) x *= beta;
  return q;
}

// Effective multiplier on column j of the matrix parameter.
Vector column_factor(const ParamState& s) {
  switch (s.kind) {
    case DesignKind::Standard:
    case DesignKind::DP:
    case DesignKind::DNP: return s.in_scale;
    case DesignKind::OR: return or_scale(s.in_scale, s.magnitude);
    case DesignKind::ER: return er_scale(s.in_scale, s.magnitude);
    case DesignKind::NoScale:
    case DesignKind::AP: return ones(s.cols());
  }
  return {};
}

Vector row_factor(const ParamState& s) {
  return has_out_scale(s.kind) ? s.out_scale : ones(s.rows());
}

// d v / d theta for the column factor, where theta are the raw input-side
// parameters (gamma, gamma_b, or alpha followed by beta).
Matrix column_factor_jacobian(const ParamState& s) {
  const std::size_t d = s.cols();
  switch (s.kind) {
    case DesignKind::Standard:
    case DesignKind::DP: return Matrix::identity(d);
    case DesignKind::OR: {
      const Vector q = sphere_normalize(s.in_scale);
      const double an = norm(s.in_scale);
      const double gain = std::sqrt(static_cast<double>(d)) / an;
      Matrix jac(d, d + 1);
      for (std::size_t j = 0; j < d; ++j) {
        const double aj = s.in_scale[j] / an;
        for (std::size_t k = 0; k < d; ++k) {
          const double proj = (j == k ? 1.0 : 0.0) - aj * s.in_scale[k] / an;
          jac(j, k) = s.magnitude * gain * proj;
        }
        jac(j, d) = q[j];
      }
      return jac;
    }
    case DesignKind::ER: {
      const Vector v = er_scale(s.in_scale, s.magnitude);
      const double inv_d = 1.0 / static_cast<double>(d);
      Matrix jac(d, d + 1);
      for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t k = 0; k < d; ++k) jac(j, k) = v[j] * ((j == k ? 1.0 : 0.0) - inv_d);
        jac(j, d) = v[j];
      }
      return jac;
    }
    default: return Matrix(d, 0);
  }
}

}  // namespace

std::string_view to_string(DesignKind kind) noexcept {
  switch (kind) {
    case DesignKind::NoScale: return "noscale";
    case DesignKind::Standard: return "standard";
    case DesignKind::AP: return "ap";
    case DesignKind::DP: return "dp";
    case DesignKind::DNP: return "dnp";
    case DesignKind::OR: return "or";
    case DesignKind::ER: return "er";
  }
  return "?";
}

DesignKind design_from_string(std::string_view name) {
  for (auto k : {DesignKind::NoScale, DesignKind::Standard, DesignKind::AP, DesignKind::DP,
                 DesignKind::DNP, DesignKind::OR, DesignKind::ER}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::ConfigError, "unknown design '" + std::string(name) + "'");
}

ParamState ParamState::no_scale(Matrix w) { return {DesignKind::NoScale, std::move(w), {}, {}, 0.0}; }

ParamState ParamState::standard(Matrix u, Vector gamma) {
  ParamState s{DesignKind::Standard, std::move(u), {}, std::move(gamma), 0.0};
  validate(s);
  return s;
}

ParamState ParamState::after_placement(Matrix w, Vector gamma_a) {
  ParamState s{DesignKind::AP, std::move(w), std::move(gamma_a), {}, 0.0};
  validate(s);
  return s;
}

ParamState ParamState::dual_placement(Matrix m, Vector gamma_a, Vector gamma_b) {
  ParamState s{DesignKind::DP, std::move(m), std::move(gamma_a), std::move(gamma_b), 0.0};
  validate(s);
  return s;
}

ParamState ParamState::dual_normalized(Matrix m, Vector gamma_a, Vector gamma_b) {
  ParamState s{DesignKind::DNP, std::move(m), std::move(gamma_a), std::move(gamma_b), 0.0};
  validate(s);
  return s;
}

ParamState ParamState::original_reparam(Matrix v, Vector alpha, double beta) {
  ParamState s{DesignKind::OR, std::move(v), {}, std::move(alpha), beta};
  validate(s);
  return s;
}

ParamState ParamState::exponential_reparam(Matrix w, Vector alpha, double beta) {
  ParamState s{DesignKind::ER, std::move(w), {}, std::move(alpha), beta};
  validate(s);
  return s;
}

ParamState ParamState::initial(DesignKind kind, std::size_t c, std::size_t d) {
  ParamState s;
  s.kind = kind;
  s.weight = Matrix(c, d);
  if (has_out_scale(kind)) s.out_scale = ones(c);
  if (has_in_scale(kind)) s.in_scale = kind == DesignKind::ER ? Vector(d, 0.0) : ones(d);
  if (kind == DesignKind::OR) s.magnitude = 1.0;
  return s;
}

std::size_t raw_size(DesignKind kind, std::size_t c, std::size_t d) noexcept {
  return c * d + (has_out_scale(kind) ? c : 0) + (has_in_scale(kind) ? d : 0) +
         (has_magnitude(kind) ? 1 : 0);
}

std::size_t ParamState::raw_size() const noexcept {
  return scalevec::raw_size(kind, rows(), cols());
}

Vector ParamState::flatten() const {
  Vector out;
  out.reserve(raw_size());
  out.insert(out.end(), weight.data().begin(), weight.data().end());
  out.insert(out.end(), out_scale.begin(), out_scale.end());
  out.insert(out.end(), in_scale.begin(), in_scale.end());
  if (has_magnitude(kind)) out.push_back(magnitude);
  return out;
}

ParamState ParamState::unflatten(DesignKind kind, std::size_t c, std::size_t d,
                                 std::span<const double> raw) {
  check_len(raw.size(), scalevec::raw_size(kind, c, d), "flattened parameters");
  ParamState s;
  s.kind = kind;
  auto it = raw.begin();
  s.weight = Matrix(c, d, Vector(it, it + static_cast<std::ptrdiff_t>(c * d)));
  it += static_cast<std::ptrdiff_t>(c * d);
  if (has_out_scale(kind)) {
    s.out_scale.assign(it, it + static_cast<std::ptrdiff_t>(c));
    it += static_cast<std::ptrdiff_t>(c);
  }
  if (has_in_scale(kind)) {
    s.in_scale.assign(it, it + static_cast<std::ptrdiff_t>(d));
    it += static_cast<std::ptrdiff_t>(d);
  }
  if (has_magnitude(kind)) s.magnitude = *it;
  return s;
}

std::vector<std::string> ParamState::raw_names() const {
  const char* mat = "W";
  const char* in = "gamma";
  switch (kind) {
    case DesignKind::Standard: mat = "U"; break;
    case DesignKind::DP:
    case DesignKind::DNP: mat = "M"; in = "gamma_b"; break;
    case DesignKind::OR: mat = "V"; in = "alpha"; break;
    case DesignKind::ER: in = "alpha"; break;
    default: break;
  }
  std::vector<std::string> names;
  names.reserve(raw_size());
  for (std::size_t i = 0; i < rows(); ++i)
    for (std::size_t j = 0; j < cols(); ++j)
      names.push_back(std::string(mat) + "[" + std::to_string(i) + "," + std::to_string(j) + "]");
  for (std::size_t i = 0; i < out_scale.size(); ++i)
    names.push_back("gamma_a[" + std::to_string(i) + "]");
  for (std::size_t j = 0; j < in_scale.size(); ++j)
    names.push_back(std::string(in) + "[" + std::to_string(j) + "]");
  if (has_magnitude(kind)) names.emplace_back("beta");
  return names;
}

Matrix effective_matrix(const ParamState& s) {
  reject_dnp(s, "effective_matrix");
  validate(s);
  switch (s.kind) {
    case DesignKind::NoScale: return s.weight;
    case DesignKind::Standard: return absorb(s.weight, s.in_scale);
    case DesignKind::AP: {
      Matrix a = s.weight;
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (double& x : a.row(i)) x *= s.out_scale[i];
      return a;
    }
    case DesignKind::DP: {
      Matrix a = absorb(s.weight, s.in_scale);
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (double& x : a.row(i)) x *= s.out_scale[i];
      return a;
    }
    case DesignKind::OR: return absorb(s.weight, or_scale(s.in_scale, s.magnitude));
    case DesignKind::ER: return absorb(s.weight, er_scale(s.in_scale, s.magnitude));
    case DesignKind::DNP: break;
  }
  return {};
}

double population_loss(const ParamState& state, const Matrix& target) {
  const Matrix a = effective_matrix(state);
  if (a.rows() != target.rows() || a.cols() != target.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "teacher shape differs from the student");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double r = a.data()[k] - target.data()[k];
    s += r * r;
  }
  return 0.5 * s;
}

ParamState loss_gradient(const ParamState& s, const Matrix& target) {
  const Matrix a = effective_matrix(s);
  if (a.rows() != target.rows() || a.cols() != target.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "teacher shape differs from the student");
  }
  const std::size_t c = s.rows();
  const std::size_t d = s.cols();
  const Vector u = row_factor(s);
  const Vector v = column_factor(s);

  ParamState g = s;
  Vector gu(c, 0.0);
  Vector gv(d, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double resid = a(i, j) - target(i, j);
      g.weight(i, j) = resid * u[i] * v[j];
      gu[i] += resid * s.weight(i, j) * v[j];
      gv[j] += resid * s.weight(i, j) * u[i];
    }
  }
  if (has_out_scale(s.kind)) g.out_scale = gu;

  switch (s.kind) {
    case DesignKind::Standard:
    case DesignKind::DP: g.in_scale = gv; break;
    case DesignKind::OR: {
      const Vector q = sphere_normalize(s.in_scale);
      const double an = norm(s.in_scale);
      const double gain = std::sqrt(static_cast<double>(d)) / an;
      const double along = dot(s.in_scale, gv) / an;
      g.magnitude = dot(q, gv);
      for (std::size_t k = 0; k < d; ++k) {
        g.in_scale[k] = s.magnitude * gain * (gv[k] - along * s.in_scale[k] / an);
      }
      break;
    }
    case DesignKind::ER: {
      double total = 0.0;
      for (std::size_t j = 0; j < d; ++j) total += gv[j] * v[j];
      g.magnitude = total;
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t k = 0; k < d; ++k) g.in_scale[k] = gv[k] * v[k] - inv_d * total;
      break;
    }
    default: break;
  }
  return g;
}

ParamState grad_flow_rhs(const ParamState& state, const Matrix& target) {
  ParamState g = loss_gradient(state, target);
  for (double& x : g.weight.data()) x = -x;
  for (double& x : g.out_scale) x = -x;
  for (double& x : g.in_scale) x = -x;
  g.magnitude = -g.magnitude;
  return g;
}

Matrix reparam_jacobian(const ParamState& s) {
  reject_dnp(s, "reparam_jacobian");
  validate(s);
  const std::size_t c = s.rows();
  const std::size_t d = s.cols();
  const Vector u = row_factor(s);
  const Vector v = column_factor(s);
  const Matrix dv = column_factor_jacobian(s);
  const std::size_t out_off = c * d;
  const std::size_t in_off = out_off + (has_out_scale(s.kind) ? c : 0);

  Matrix jac(c * d, s.raw_size());
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t row = i * d + j;
      jac(row, row) = u[i] * v[j];
      if (has_out_scale(s.kind)) jac(row, out_off + i) = s.weight(i, j) * v[j];
      const double w_u = s.weight(i, j) * u[i];
      for (std::size_t k = 0; k < dv.cols(); ++k) jac(row, in_off + k) = w_u * dv(j, k);
    }
  }
  return jac;
}

Matrix induced_preconditioner(const ParamState& state) {
  const Matrix jac = reparam_jacobian(state);
  return matmul_nt(jac, jac);
}

double or_rho(double beta, std::span<const double> alpha) {
  const double an2 = squared_norm(alpha);
  if (!(std::sqrt(an2) > 1e-30)) throw Error(ErrorCode::ZeroVector, "OR direction alpha = 0");
  return beta * beta * static_cast<double>(alpha.size()) / an2;
}

Matrix or_scale_preconditioner(double beta, std::span<const double> alpha) {
  if (beta == 0.0) throw Error(ErrorCode::ZeroMagnitude, "OR magnitude beta = 0");
  const Vector q = sphere_normalize(alpha);
  const double rho = or_rho(beta, alpha);
  const std::size_t d = alpha.size();
  const double inv_d = 1.0 / static_cast<double>(d);
  Matrix p(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double qq = q[i] * q[j];
      p(i, j) = qq + rho * ((i == j ? 1.0 : 0.0) - qq * inv_d);
    }
  }
  return p;
}

std::variant<UnifiedFactors, NonReparam> unified_factors(const ParamState& state) {
  if (state.kind == DesignKind::DNP) return NonReparam{};
  validate(state);
  return UnifiedFactors{row_factor(state), column_factor(state)};
}

std::vector<UnifiedFactors> hg_unified_factors(const std::vector<ParamState>& branches) {
  std::vector<UnifiedFactors> out;
  out.reserve(branches.size());
  for (const auto& b : branches) {
    if (b.kind != DesignKind::Standard) {
      throw Error(ErrorCode::ConfigError, "HG branches are Standard designs");
    }
    if (!branches.empty() && b.cols() != branches.front().cols()) {
      throw Error(ErrorCode::DimensionMismatch, "HG branches share one input dimension");
    }
    out.push_back(std::get<UnifiedFactors>(unified_factors(b)));
  }
  return out;
}

Matrix apply_unified(const Matrix& w, const UnifiedFactors& f) {
  check_len(f.u.size(), w.rows(), "unified u");
  check_len(f.v.size(), w.cols(), "unified v");
  Matrix out = w;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) = w(i, j) * (f.u[i] * f.v[j]);
  return out;
}

Matrix absorb(const Matrix& w, std::span<const double> gamma) {
  check_len(gamma.size(), w.cols(), "absorbed scale vector");
  Matrix out = w;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < w.cols(); ++j) row[j] *= gamma[j];
  }
  return out;
}

Vector conserved_quantities(const ParamState& s) {
  const std::size_t c = s.rows();
  const std::size_t d = s.cols();
  Vector out;
  switch (s.kind) {
    case DesignKind::Standard:
      for (std::size_t j = 0; j < d; ++j) {
        const Vector col = s.weight.col(j);
        out.push_back(s.in_scale[j] * s.in_scale[j] - squared_norm(col));
      }
      break;
    case DesignKind::AP:
      for (std::size_t i = 0; i < c; ++i)
        out.push_back(s.out_scale[i] * s.out_scale[i] - squared_norm(s.weight.row(i)));
      break;
    case DesignKind::DP:
    case DesignKind::DNP:
      for (std::size_t i = 0; i < c; ++i)
        out.push_back(s.out_scale[i] * s.out_scale[i] - squared_norm(s.weight.row(i)));
      for (std::size_t j = 0; j < d; ++j) {
        const Vector col = s.weight.col(j);
        out.push_back(s.in_scale[j] * s.in_scale[j] - squared_norm(col));
      }
      break;
    case DesignKind::OR:
      out.push_back(s.magnitude * s.magnitude - frobenius_sq(s.weight));
      out.push_back(norm(s.in_scale));
      break;
    case DesignKind::ER:
      out.push_back(frobenius_sq(s.weight) - 2.0 * s.magnitude);
      out.push_back(std::accumulate(s.in_scale.begin(), s.in_scale.end(), 0.0));
      break;
    case DesignKind::NoScale: break;
  }
  return out;
}

ParamState random_state(DesignKind kind, std::size_t c, std::size_t d, Rng& rng) {
  ParamState s = ParamState::initial(kind, c, d);
  for (double& x : s.weight.data()) x = 0.5 * rng.normal();
  for (double& x : s.out_scale) x = 1.0 + 0.5 * rng.normal();
  switch (kind) {
    case DesignKind::OR:
      for (double& x : s.in_scale) x = rng.normal();
      s.magnitude = 1.0 + 0.5 * rng.normal();
      break;
    case DesignKind::ER:
      for (double& x : s.in_scale) x = 0.5 * rng.normal();
      s.magnitude = 0.5 * rng.normal();
      break;
    default:
      for (double& x : s.in_scale) x = 1.0 + 0.5 * rng.normal();
  }
  return s;
}

namespace {

double relative_to_analytic(const Matrix& analytic, const Matrix& numeric) {
  double scale = 0.0;
  for (double x : analytic.data()) scale = std::max(scale, std::abs(x));
  return max_abs_diff(analytic, numeric) / std::max(scale, 1e-12);
}

}  // namespace

double gradient_check(const ParamState& state, const Matrix& target, double h) {
  const DesignKind kind = state.kind;
  const std::size_t c = state.rows();
  const std::size_t d = state.cols();
  const VectorMap loss = [&](std::span<const double> q) {
    return Vector{population_loss(ParamState::unflatten(kind, c, d, q), target)};
  };
  const Vector g = loss_gradient(state, target).flatten();
  const Matrix numeric = central_diff_jacobian(loss, state.flatten(), h);
  return relative_to_analytic(Matrix(1, g.size(), g), numeric);
}

double jacobian_check(const ParamState& state, double h) {
  const DesignKind kind = state.kind;
  const std::size_t c = state.rows();
  const std::size_t d = state.cols();
  const VectorMap phi = [&](std::span<const double> q) {
    return effective_matrix(ParamState::unflatten(kind, c, d, q)).values();
  };
  return relative_to_analytic(reparam_jacobian(state),
                              central_diff_jacobian(phi, state.flatten(), h));
}

}  // namespace scalevec
