#include "ngc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ngc/error.hpp"

namespace ngc {

namespace {

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::ShapeError,
          std::string(what) + ": " + dims(a) + " vs " + dims(b));
}

void require_finite(const Matrix& m, const char* what) {
  require(!m.empty(), ErrorCode::InvalidInput, std::string(what) + ": empty matrix");
  require(m.all_finite(), ErrorCode::InvalidInput, std::string(what) + ": non-finite entry");
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  require(rows >= 1 && cols >= 1, ErrorCode::InvalidInput, "matrix dimensions must be >= 1");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(rows >= 1 && cols >= 1, ErrorCode::InvalidInput, "matrix dimensions must be >= 1");
  require(data_.size() == rows * cols, ErrorCode::ShapeError, "data length does not match dimensions");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  require(rows_ >= 1 && cols_ >= 1, ErrorCode::InvalidInput, "matrix dimensions must be >= 1");
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require(r.size() == cols_, ErrorCode::ShapeError, "ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Vector Matrix::column(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
  require(r0 + nr <= rows_ && c0 + nc <= cols_, ErrorCode::ShapeError, "block out of range");
  Matrix out(nr, nc);
  for (std::size_t r = 0; r < nr; ++r)
    std::copy_n(data_.data() + (r0 + r) * cols_ + c0, nc, out.data_.data() + r * nc);
  return out;
}

void Matrix::set_block(std::size_t r0, std::size_t c0, const Matrix& src) {
  require(r0 + src.rows_ <= rows_ && c0 + src.cols_ <= cols_, ErrorCode::ShapeError,
          "set_block out of range");
  for (std::size_t r = 0; r < src.rows_; ++r)
    std::copy_n(src.data_.data() + r * src.cols_, src.cols_, data_.data() + (r0 + r) * cols_ + c0);
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorCode::ShapeError, "matmul: " + dims(a) + " * " + dims(b));
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* out_row = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* b_row = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), ErrorCode::ShapeError, "matmul_tn: " + dims(a) + " ^T* " + dims(b));
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* b_row = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* out_row = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aki * b_row[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), ErrorCode::ShapeError, "matmul_nt: " + dims(a) + " * " + dims(b) + "^T");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
  require(m.cols() == x.size(), ErrorCode::ShapeError, "matvec: length mismatch");
  Vector out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), x);
  return out;
}

Vector vecmat(std::span<const double> x, const Matrix& m) {
  require(m.rows() == x.size(), ErrorCode::ShapeError, "vecmat: length mismatch");
  Vector out(m.cols(), 0.0);
  for (std::size_t k = 0; k < m.rows(); ++k) {
    const auto row = m.row(k);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += x[k] * row[j];
  }
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return out;
}

Matrix hstack(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), ErrorCode::ShapeError, "hstack: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out.set_block(0, 0, a);
  out.set_block(0, a.cols(), b);
  return out;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), ErrorCode::ShapeError, "vstack: column mismatch");
  Matrix out(a.rows() + b.rows(), a.cols());
  out.set_block(0, 0, a);
  out.set_block(a.rows(), 0, b);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double frobenius_norm(const Matrix& m) { return norm2(m.values()); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) worst = std::max(worst, std::abs(av[i] - bv[i]));
  return worst;
}

// --- SVD --------------------------------------------------------------------

namespace {

void rotate(std::span<double> p, std::span<double> q, double c, double s) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = p[i];
    const double y = q[i];
    p[i] = c * x - s * y;
    q[i] = s * x + c * y;
  }
}

// Gram–Schmidt against the first `count` rows of `basis`, applied twice.
void orthogonalize(std::span<double> v, const Matrix& basis, std::size_t count) {
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < count; ++j) {
      const auto b = basis.row(j);
      const double proj = dot(v, b);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * b[i];
    }
  }
}

// Decomposes a tall matrix (rows >= cols). Works on the transpose so that
// each column of the input is a contiguous row.
SvdResult jacobi_tall(const Matrix& m) {
  const std::size_t n = m.cols();
  const std::size_t len = m.rows();
  Matrix work = m.transpose();      // n x len, row i = column i of m
  Matrix v = Matrix::identity(n);   // row i = column i of V

  constexpr int kMaxSweeps = 100;
  constexpr double kTol = 1e-15;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto wp = work.row(p);
        auto wq = work.row(q);
        const double alpha = dot(wp, wp);
        const double beta = dot(wq, wq);
        const double gamma = dot(wp, wq);
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(wp, wq, c, s);
        rotate(v.row(p), v.row(q), c, s);
      }
    }
    if (!rotated) break;
  }

  Vector norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = norm2(work.row(i));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  const double smax = norms[order[0]];
  const double floor = smax * 1e-13;
  Matrix ut(n, len);  // rows = columns of U
  Vector s(n);
  Matrix vt(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    s[k] = norms[src];
    std::copy_n(v.row(src).data(), n, vt.row(k).data());
    auto u = ut.row(k);
    if (s[k] > floor && s[k] > 0.0) {
      const auto w = work.row(src);
      for (std::size_t i = 0; i < len; ++i) u[i] = w[i] / s[k];
      orthogonalize(u, ut, k);
      const double nu = norm2(u);
      if (nu > 0.5) {
        for (double& x : u) x /= nu;
        continue;
      }
    }
    // Complete with a canonical basis vector orthogonal to the previous ones.
    for (std::size_t e = 0; e < len; ++e) {
      std::fill(u.begin(), u.end(), 0.0);
      u[e] = 1.0;
      orthogonalize(u, ut, k);
      const double nu = norm2(u);
      if (nu > 0.1) {
        for (double& x : u) x /= nu;
        break;
      }
    }
  }
  return SvdResult{ut.transpose(), std::move(s), std::move(vt)};
}

}  // namespace

SvdResult svd(const Matrix& m) {
  require_finite(m, "svd");
  if (m.rows() >= m.cols()) return jacobi_tall(m);
  SvdResult t = jacobi_tall(m.transpose());
  return SvdResult{t.vt.transpose(), std::move(t.s), t.u.transpose()};
}

std::size_t SvdResult::numerical_rank(double relative_tolerance) const {
  if (s.empty() || s[0] == 0.0) return 0;
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [&](double x) { return x > relative_tolerance * s[0]; }));
}

Matrix SvdResult::reconstruct() const { return truncate(*this, s.size()); }

Factorization truncate_factor(const SvdResult& sv, std::size_t r) {
  require(r >= 1 && r <= sv.s.size(), ErrorCode::RankError,
          "rank " + std::to_string(r) + " outside [1, " + std::to_string(sv.s.size()) + "]");
  const std::size_t m = sv.u.rows();
  const std::size_t n = sv.vt.cols();
  Matrix a(m, r);
  Matrix b(n, r);
  for (std::size_t k = 0; k < r; ++k) {
    const double root = std::sqrt(sv.s[k]);
    for (std::size_t i = 0; i < m; ++i) a(i, k) = sv.u(i, k) * root;
    for (std::size_t j = 0; j < n; ++j) b(j, k) = sv.vt(k, j) * root;
  }
  return {std::move(a), std::move(b)};
}

Matrix truncate(const SvdResult& sv, std::size_t r) {
  require(r >= 1 && r <= sv.s.size(), ErrorCode::RankError,
          "rank " + std::to_string(r) + " outside [1, " + std::to_string(sv.s.size()) + "]");
  Matrix us = sv.u.left_cols(r);
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t k = 0; k < r; ++k) us(i, k) *= sv.s[k];
  return matmul(us, sv.vt.top_rows(r));
}

namespace {

// V·diag(f(s))·Uᵀ·rhs, the common core of pinv and least squares.
Matrix spectral_solve(const SvdResult& sv, const Matrix& rhs, const Vector& gains) {
  Matrix ut_rhs = matmul_tn(sv.u, rhs);  // k x p
  for (std::size_t k = 0; k < gains.size(); ++k)
    for (double& x : ut_rhs.row(k)) x *= gains[k];
  return matmul_tn(sv.vt, ut_rhs);  // n x p
}

Vector pinv_gains(const SvdResult& sv) {
  Vector g(sv.s.size(), 0.0);
  const double cutoff = sv.s.empty() ? 0.0 : kPinvRelativeCutoff * sv.s[0];
  for (std::size_t k = 0; k < g.size(); ++k)
    if (sv.s[k] > cutoff && sv.s[k] > 0.0) g[k] = 1.0 / sv.s[k];
  return g;
}

}  // namespace

Matrix pinv(const Matrix& m) {
  const SvdResult sv = svd(m);
  return spectral_solve(sv, Matrix::identity(m.rows()), pinv_gains(sv));
}

double sigma_max(const Matrix& m) { return svd(m).s.front(); }

Matrix least_squares(const Matrix& x, const Matrix& y, double ridge) {
  require(x.rows() == y.rows(), ErrorCode::ShapeError,
          "least_squares: regressor " + dims(x) + " vs target " + dims(y));
  require(ridge >= 0.0 && std::isfinite(ridge), ErrorCode::InvalidInput, "ridge must be >= 0");
  require_finite(y, "least_squares target");
  const SvdResult sv = svd(x);
  if (ridge == 0.0) return spectral_solve(sv, y, pinv_gains(sv));
  Vector g(sv.s.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = sv.s[k] / (sv.s[k] * sv.s[k] + ridge);
  return spectral_solve(sv, y, g);
}

bool is_symmetric(const Matrix& m, double tolerance) {
  if (m.rows() != m.cols()) return false;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > tolerance) return false;
  return true;
}

Matrix cholesky(const Matrix& m) {
  require_finite(m, "cholesky");
  require(m.rows() == m.cols(), ErrorCode::ShapeError, "cholesky: matrix not square");
  const std::size_t n = m.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = m(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    require(diag > 0.0, ErrorCode::NotPositiveDefinite,
            "non-positive pivot at index " + std::to_string(j));
    l(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double acc = m(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      l(i, j) = acc / l(j, j);
    }
  }
  return l;
}

Vector symmetric_eigenvalues(const Matrix& m) {
  require_finite(m, "symmetric_eigenvalues");
  require(m.rows() == m.cols(), ErrorCode::ShapeError, "eigenvalues: matrix not square");
  const std::size_t n = m.rows();
  Matrix a = m;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off == 0.0 || off < 1e-30 * frobenius_norm(a) * frobenius_norm(a)) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  Vector eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

}  // namespace ngc
