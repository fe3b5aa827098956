#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ngc {

using Vector = std::vector<double>;

/// Dense row-major real matrix. A default-constructed Matrix is "unset"
/// (0x0); every sized constructor requires rows >= 1 and cols >= 1.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vector column(std::size_t c) const;

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  Matrix transpose() const;
  /// Copy of the nr x nc sub-block starting at (r0, c0).
  Matrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const;
  void set_block(std::size_t r0, std::size_t c0, const Matrix& src);
  Matrix top_rows(std::size_t n) const { return block(0, 0, n, cols_); }
  Matrix left_cols(std::size_t n) const { return block(0, 0, rows_, n); }

  bool all_finite() const noexcept;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& m, std::span<const double> x);
/// Row vector times matrix: x·m.
Vector vecmat(std::span<const double> x, const Matrix& m);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix hstack(const Matrix& a, const Matrix& b);
Matrix vstack(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

struct SvdResult {
  Matrix u;   // m x k, orthonormal columns
  Vector s;   // k singular values, non-increasing
  Matrix vt;  // k x n, orthonormal rows

  std::size_t numerical_rank(double relative_tolerance = 1e-12) const;
  Matrix reconstruct() const;
};

/// Thin SVD by one-sided Jacobi rotations with a fixed cyclic sweep order.
/// k = min(rows, cols). Columns of u belonging to zero singular values are
/// completed to an orthonormal set.
SvdResult svd(const Matrix& m);

struct Factorization {
  Matrix a;  // m x r, equals U_r Σ_r^{1/2}
  Matrix b;  // n x r, equals V_r Σ_r^{1/2}
};

/// Split the top-r singular triplets symmetrically: a·bᵀ is the best rank-r
/// approximation of the decomposed matrix.
Factorization truncate_factor(const SvdResult& sv, std::size_t r);
/// Rank-r truncated reconstruction U_r Σ_r V_rᵀ.
Matrix truncate(const SvdResult& sv, std::size_t r);

inline constexpr double kPinvRelativeCutoff = 1e-10;
inline constexpr double kDefaultRidge = 1e-8;

/// Moore–Penrose pseudo-inverse; singular values below 1e-10·σ_max are
/// treated as zero.
Matrix pinv(const Matrix& m);
double sigma_max(const Matrix& m);

/// argmin_P ‖x·P − y‖_F² + ridge·‖P‖_F². With ridge == 0 the minimum-norm
/// solution is returned.
Matrix least_squares(const Matrix& x, const Matrix& y, double ridge);

/// Lower-triangular L with L·Lᵀ = m. Throws NotPositiveDefinite.
Matrix cholesky(const Matrix& m);
/// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
Vector symmetric_eigenvalues(const Matrix& m);
bool is_symmetric(const Matrix& m, double tolerance);

}  // namespace ngc
