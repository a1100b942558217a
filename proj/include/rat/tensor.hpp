#pragma once

// Dense row-major linear algebra in double precision.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "rat/errors.hpp"

namespace rat {

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t n, double fill = 0.0);
  /// Takes ownership of `values`; throws NonFiniteError on NaN/Inf.
  explicit Vector(std::vector<double> values);
  Vector(std::initializer_list<double> values);

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  Vector& operator+=(const Vector& o);
  Vector& operator-=(const Vector& o);
  Vector& operator*=(double s);

  /// True if every entry is finite.
  bool all_finite() const;

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> data_;
};

Vector operator+(Vector a, const Vector& b);
Vector operator-(Vector a, const Vector& b);
Vector operator*(double s, Vector a);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
inline double dot(const Vector& a, const Vector& b) { return dot(a.span(), b.span()); }
inline double norm(const Vector& a) { return norm(a.span()); }
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
/// Cosine similarity; 0 if either vector is zero.
double cosine(const Vector& a, const Vector& b);

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Row-major data; throws ShapeError on size mismatch, NonFiniteError on NaN/Inf.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  const std::vector<double>& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  Matrix transpose() const;
  Matrix& operator*=(double s);
  Matrix& operator+=(const Matrix& o);
  void add_diagonal(double v);
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator-(Matrix a, const Matrix& b);

/// a * b.
Matrix matmul(const Matrix& a, const Matrix& b);
/// h * h^T, computed row-by-row without forming h^T.
Matrix gram(const Matrix& h);
/// h^T * h (p x p).
Matrix cross_gram(const Matrix& h);
/// m * x.
Vector matvec(const Matrix& m, const Vector& x);
/// m^T * x.
Vector matvec_t(const Matrix& m, const Vector& x);
/// Rows of m selected by `rows`, in that order.
Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows);
Vector select(const Vector& v, std::span<const std::size_t> idx);
/// Vertical concatenation.
Matrix vstack(const Matrix& top, const Matrix& bottom);

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
class Cholesky {
 public:
  /// Throws SingularityError on a non-positive pivot.
  explicit Cholesky(const Matrix& m);

  Vector solve(const Vector& rhs) const;
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  std::vector<double> l_;
};

/// Solves m x = rhs for SPD m. No jitter is added.
Vector solve_spd(const Matrix& m, const Vector& rhs);

/// Solves a general square system by LU with full pivoting.
Vector solve_general(const Matrix& m, const Vector& rhs);

/// Eigenvalues of a symmetric matrix in ascending order (Householder
/// tridiagonalization followed by implicit QR).
std::vector<double> symmetric_eigenvalues(const Matrix& m);

}  // namespace rat
