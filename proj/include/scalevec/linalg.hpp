#pragma once

// Small dense double-precision linear algebra shared by every module.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace scalevec {

using Vector = std::vector<double>;

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  Vector col(std::size_t j) const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const Vector& values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> x);
double norm(std::span<const double> x);
bool all_finite(std::span<const double> x);

/// Largest absolute entrywise difference; DimensionMismatch on shape mismatch.
double max_abs_diff(std::span<const double> a, std::span<const double> b);
double max_abs_diff(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T without forming the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
double frobenius_sq(const Matrix& a);

/// Norm(x) = sqrt(d) x / ||x||. Throws ZeroVector when ||x|| <= 1e-30.
Vector sphere_normalize(std::span<const double> x);

/// gamma ⊙ Norm(x).
Vector rms_norm(std::span<const double> x, std::span<const double> gamma);

/// Eigenvalues (lower, upper) of [[h11, h12], [h12, h22]].
std::pair<double, double> sym2_eigvals(double h11, double h12, double h22);

using VectorMap = std::function<Vector(std::span<const double>)>;

/// J[i][j] = (f(q + h e_j)[i] - f(q - h e_j)[i]) / 2h.
Matrix central_diff_jacobian(const VectorMap& f, std::span<const double> q, double h);

struct PowerIterationOptions {
  std::size_t max_iterations = 200000;
  double tolerance = 1e-14;
};

/// Largest eigenvalue of a symmetric matrix by power iteration on a
/// Gershgorin-shifted positive semidefinite copy; returns the Rayleigh quotient.
double max_eigenvalue(const Matrix& sym, PowerIterationOptions opts = {});
/// Smallest eigenvalue, via max_eigenvalue of the negated matrix.
double min_eigenvalue(const Matrix& sym, PowerIterationOptions opts = {});

/// Largest |A_ij - A_ji|.
double max_asymmetry(const Matrix& a);

}  // namespace scalevec
