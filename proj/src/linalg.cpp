#include "scalevec/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scalevec/error.hpp"

namespace scalevec {

namespace {

constexpr double kZeroNormThreshold = 1e-30;

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, Vector data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_same_size(rows * cols, data_.size(), "Matrix storage");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Vector data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require_same_size(row.size(), c, "Matrix::from_rows row length");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Vector Matrix::col(std::size_t j) const {
  Vector out(rows_);
  for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

double norm(std::span<const double> x) {
  // Scaled accumulation keeps ||x|| representable for entries near 1e±200.
  double scale = 0.0;
  for (double v : x) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0.0;
  double s = 0.0;
  for (double v : x) {
    const double r = v / scale;
    s += r * r;
  }
  return scale * std::sqrt(s);
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_size(a.rows(), b.rows(), "max_abs_diff rows");
  require_same_size(a.cols(), b.cols(), "max_abs_diff cols");
  return max_abs_diff(a.data(), b.data());
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_same_size(a.cols(), b.rows(), "matmul inner dimension");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto crow = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require_same_size(a.cols(), b.cols(), "matmul_nt inner dimension");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
  return c;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  require_same_size(a.cols(), x.size(), "matvec");
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

double frobenius_sq(const Matrix& a) { return squared_norm(a.data()); }

Vector sphere_normalize(std::span<const double> x) {
  const double n = norm(x);
  if (!(n > kZeroNormThreshold)) {
    throw Error(ErrorCode::ZeroVector, "sphere_normalize of a vector with norm <= 1e-30");
  }
  const double factor = std::sqrt(static_cast<double>(x.size())) / n;
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = factor * x[i];
  return out;
}

Vector rms_norm(std::span<const double> x, std::span<const double> gamma) {
  require_same_size(x.size(), gamma.size(), "rms_norm");
  Vector z = sphere_normalize(x);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] *= gamma[i];
  return z;
}

std::pair<double, double> sym2_eigvals(double h11, double h12, double h22) {
  // mean ± hypot(half-difference, off-diagonal) is the quadratic formula
  // written without the cancellation in (h11 - h22)^2 + 4 h12^2.
  const double mean = 0.5 * (h11 + h22);
  const double radius = std::hypot(0.5 * (h11 - h22), h12);
  return {mean - radius, mean + radius};
}

Matrix central_diff_jacobian(const VectorMap& f, std::span<const double> q, double h) {
  if (!(h > 0.0)) throw Error(ErrorCode::ConfigError, "central_diff_jacobian needs h > 0");
  Vector probe(q.begin(), q.end());
  Matrix jac;
  for (std::size_t j = 0; j < q.size(); ++j) {
    probe[j] = q[j] + h;
    const Vector plus = f(probe);
    probe[j] = q[j] - h;
    const Vector minus = f(probe);
    probe[j] = q[j];
    require_same_size(plus.size(), minus.size(), "central_diff_jacobian output");
    if (j == 0) jac = Matrix(plus.size(), q.size());
    for (std::size_t i = 0; i < plus.size(); ++i) jac(i, j) = (plus[i] - minus[i]) / (2.0 * h);
  }
  return jac;
}

double max_asymmetry(const Matrix& a) {
  require_same_size(a.rows(), a.cols(), "max_asymmetry");
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - a(j, i)));
  return m;
}

double max_eigenvalue(const Matrix& sym, PowerIterationOptions opts) {
  require_same_size(sym.rows(), sym.cols(), "max_eigenvalue");
  const std::size_t n = sym.rows();
  if (n == 0) throw Error(ErrorCode::DimensionMismatch, "max_eigenvalue of an empty matrix");

  double shift = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) row_sum += std::abs(sym(i, j));
    shift = std::max(shift, row_sum);
  }
  if (shift == 0.0) return 0.0;

  // Deterministic start with no symmetry that could make it orthogonal to
  // the dominant eigenvector of a structured matrix.
  Vector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * std::sin(1.0 + 3.7 * static_cast<double>(i));
  double inv = 1.0 / norm(v);
  for (double& x : v) x *= inv;

  Vector w(n);
  double rayleigh = 0.0;
  std::size_t stable = 0;
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) w[i] = dot(sym.row(i), v) + shift * v[i];
    const double next = dot(v, w);
    const double wn = norm(w);
    if (wn == 0.0) break;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / wn;
    if (std::abs(next - rayleigh) <= opts.tolerance * shift) {
      if (++stable >= 5) {
        rayleigh = next;
        break;
      }
    } else {
      stable = 0;
    }
    rayleigh = next;
  }
  return rayleigh - shift;
}

double min_eigenvalue(const Matrix& sym, PowerIterationOptions opts) {
  Matrix neg = sym;
  for (double& x : neg.data()) x = -x;
  return -max_eigenvalue(neg, opts);
}

}  // namespace scalevec
