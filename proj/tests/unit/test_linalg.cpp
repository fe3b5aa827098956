#include <cmath>
#include <limits>

#include "doctest.h"
#include "ngc/error.hpp"
#include "ngc/linalg.hpp"
#include "ngc/rng.hpp"
#include "ngc/tensor_io.hpp"
#include "oracles.hpp"

using namespace ngc;

namespace {

double orthonormality_error(const Matrix& q) { return max_abs_diff(matmul_tn(q, q), Matrix::identity(q.cols())); }

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an ngc::Error");
  return ErrorCode::InvalidInput;
}

}  // namespace

TEST_CASE("svd of identity and diagonal matrices") {
  const SvdResult id = svd(Matrix::identity(3));
  CHECK(id.s == Vector{1.0, 1.0, 1.0});
  const SvdResult d = svd(Matrix{{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  for (int i = 0; i < 3; ++i) CHECK(d.s[i] == doctest::Approx(3 - i).epsilon(1e-14));
}

TEST_CASE("svd reconstructs a seeded random matrix") {
  Rng rng = make_rng(42);
  const Matrix m = gaussian_matrix(6, 4, rng);
  const SvdResult sv = svd(m);
  CHECK(frobenius_norm(sv.reconstruct() - m) < 1e-10);
  CHECK(orthonormality_error(sv.u) < 1e-9);
  CHECK(orthonormality_error(sv.vt.transpose()) < 1e-9);
}

TEST_CASE("svd invariants over random shapes") {
  Rng rng = make_rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng() % 20, n = 1 + rng() % 20;
    const Matrix a = gaussian_matrix(m, n, rng);
    const SvdResult sv = svd(a);
    CHECK(frobenius_norm(sv.reconstruct() - a) <= 1e-9 * frobenius_norm(a));
    for (std::size_t i = 0; i < sv.s.size(); ++i) {
      CHECK(sv.s[i] >= 0.0);
      if (i > 0) CHECK(sv.s[i] <= sv.s[i - 1]);
    }
    CHECK(orthonormality_error(sv.u) < 1e-9);
    CHECK(orthonormality_error(sv.vt.transpose()) < 1e-9);
  }
}

TEST_CASE("svd is deterministic and rejects non-finite input") {
  Rng rng = make_rng(3);
  const Matrix a = gaussian_matrix(7, 5, rng);
  const SvdResult s1 = svd(a), s2 = svd(a);
  CHECK(s1.u == s2.u);
  CHECK(s1.s == s2.s);
  CHECK(s1.vt == s2.vt);
  Matrix bad = a;
  bad(2, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK(code_of([&] { svd(bad); }) == ErrorCode::InvalidInput);
}

TEST_CASE("rank-deficient svd keeps orthonormal factors") {
  Rng rng = make_rng(4);
  const Matrix a = matmul(gaussian_matrix(9, 2, rng), gaussian_matrix(2, 6, rng));
  const SvdResult sv = svd(a);
  CHECK(sv.numerical_rank() == 2);
  CHECK(orthonormality_error(sv.u) < 1e-9);
}

TEST_CASE("truncate_factor keeps the top singular triplets") {
  const Matrix d{{3, 0, 0}, {0, 2, 0}, {0, 0, 1}};
  const Factorization f = truncate_factor(svd(d), 2);
  CHECK(f.a.cols() == 2);
  CHECK(max_abs_diff(matmul_nt(f.a, f.b), Matrix{{3, 0, 0}, {0, 2, 0}, {0, 0, 0}}) < 1e-12);
  CHECK(code_of([&] { truncate_factor(svd(d), 0); }) == ErrorCode::RankError);
  CHECK(code_of([&] { truncate_factor(svd(d), 4); }) == ErrorCode::RankError);
}

TEST_CASE("truncation error equals planted tail energy") {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng() % 31, n = 2 + rng() % 47, k = std::min(m, n);
    std::vector<double> s(k);
    for (std::size_t i = 0; i < k; ++i) s[i] = static_cast<double>(k - i) + 0.5 * static_cast<double>(rng() % 100) / 100.0;
    std::sort(s.rbegin(), s.rend());
    const Matrix w = oracle::planted_spectrum(m, n, s, rng);
    const std::size_t r = 1 + rng() % k;
    double tail = 0.0;
    for (std::size_t i = r; i < k; ++i) tail += s[i] * s[i];
    const double err = frobenius_norm(w - truncate(svd(w), r));
    CHECK(std::abs(err - std::sqrt(tail)) <= 1e-8 * std::max(1.0, frobenius_norm(w)));
  }
}

TEST_CASE("8x6 rank-3 truncation error") {
  Rng rng = make_rng(6);
  const Matrix w = oracle::planted_spectrum(8, 6, {6, 5, 4, 3, 2, 1}, rng);
  const Factorization f = truncate_factor(svd(w), 3);
  CHECK(frobenius_norm(w - matmul_nt(f.a, f.b)) == doctest::Approx(std::sqrt(9.0 + 4.0 + 1.0)).epsilon(1e-10));
}

TEST_CASE("pinv examples and Moore-Penrose conditions") {
  CHECK(max_abs_diff(pinv(Matrix::identity(4)), Matrix::identity(4)) < 1e-14);
  CHECK(max_abs_diff(pinv(Matrix{{2, 0}, {0, 0}}), Matrix{{0.5, 0}, {0, 0}}) < 1e-14);
  Rng rng = make_rng(7);
  const Matrix a = gaussian_matrix(10, 4, rng);
  const Matrix p = pinv(a);
  CHECK(max_abs_diff(matmul(p, a), Matrix::identity(4)) < 1e-8);
  const Matrix r = matmul(gaussian_matrix(7, 3, rng), gaussian_matrix(3, 5, rng));
  const Matrix pr = pinv(r);
  CHECK(max_abs_diff(matmul(matmul(r, pr), r), r) < 1e-8);
  CHECK(max_abs_diff(matmul(matmul(pr, r), pr), pr) < 1e-8);
  const Matrix rp = matmul(r, pr), pr_r = matmul(pr, r);
  CHECK(max_abs_diff(rp, rp.transpose()) < 1e-8);
  CHECK(max_abs_diff(pr_r, pr_r.transpose()) < 1e-8);
}

TEST_CASE("sigma_max against power iteration") {
  CHECK(sigma_max(Matrix::identity(3)) == doctest::Approx(1.0));
  CHECK(sigma_max(Matrix{{0, 2}, {0, 0}}) == doctest::Approx(2.0).epsilon(1e-14));
  Rng rng = make_rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = gaussian_matrix(5, 5, rng);
    CHECK(std::abs(sigma_max(a) - oracle::power_sigma_max(a, 5000)) <= 1e-8 * sigma_max(a));
  }
}

TEST_CASE("least squares") {
  Rng rng = make_rng(9);
  const Matrix y = gaussian_matrix(4, 3, rng);
  CHECK(max_abs_diff(least_squares(Matrix::identity(4), y, 0.0), y) < 1e-12);

  const Matrix x = gaussian_matrix(12, 5, rng);
  const Matrix p_star = gaussian_matrix(5, 2, rng);
  CHECK(frobenius_norm(matmul(x, least_squares(x, matmul(x, p_star), 0.0)) - matmul(x, p_star)) < 1e-9);

  const Matrix yo = gaussian_matrix(12, 2, rng);
  const Matrix p = least_squares(x, yo, 0.0);
  CHECK(frobenius_norm(matmul_tn(x, matmul(x, p) - yo)) < 1e-8);

  // Ridge normal equations: (xᵀx + ridge·I)·P = xᵀy.
  const double ridge = 0.3;
  const Matrix pr = least_squares(x, yo, ridge);
  CHECK(max_abs_diff(matmul(matmul_tn(x, x) + Matrix::identity(5) * ridge, pr), matmul_tn(x, yo)) < 1e-9);

  CHECK(code_of([&] { least_squares(x, gaussian_matrix(3, 2, rng), 0.0); }) == ErrorCode::ShapeError);
}

TEST_CASE("minimum-norm solution of an underdetermined system") {
  Rng rng = make_rng(10);
  const Matrix x = gaussian_matrix(3, 6, rng);
  const Matrix y = gaussian_matrix(3, 1, rng);
  const Matrix p = least_squares(x, y, 0.0);
  CHECK(max_abs_diff(matmul(x, p), y) < 1e-10);
  CHECK(max_abs_diff(p, matmul(pinv(x), y)) < 1e-10);
}

TEST_CASE("cholesky and symmetric eigenvalues") {
  const Matrix l = cholesky(Matrix{{4, 2}, {2, 3}});
  CHECK(max_abs_diff(matmul_nt(l, l), Matrix{{4, 2}, {2, 3}}) < 1e-14);
  CHECK(code_of([] { cholesky(Matrix{{1, 2}, {2, 1}}); }) == ErrorCode::NotPositiveDefinite);
  const Vector ev = symmetric_eigenvalues(Matrix{{2, 1}, {1, 2}});
  CHECK(ev[0] == doctest::Approx(1.0));
  CHECK(ev[1] == doctest::Approx(3.0));
}

TEST_CASE("matrix construction invariants") {
  CHECK(code_of([] { Matrix(0, 3); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { Matrix(2, 2, std::vector<double>{1, 2, 3}); }) == ErrorCode::ShapeError);
  CHECK(code_of([] { matmul(Matrix(2, 3), Matrix(2, 3)); }) == ErrorCode::ShapeError);
}

TEST_CASE("NGCT round trip and header layout") {
  Rng rng = make_rng(11);
  const Matrix m = gaussian_matrix(3, 5, rng);
  const auto path = std::filesystem::temp_directory_path() / "ngc_test_linalg.ngct";
  write_matrix(path, m);
  CHECK(read_matrix(path) == m);
  Tensor t{{2, 3}, {1, 2, 3, 4, 5, 6}};
  const std::string bytes = encode_ngct(t);
  CHECK(bytes.substr(0, 4) == "NGCT");
  CHECK(bytes.size() == 4 + 4 + 4 + 2 * 4 + 6 * 8);
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  const Tensor back = decode_ngct(bytes);
  CHECK(back.dims == t.dims);
  CHECK(back.data == t.data);
  CHECK(code_of([&] { decode_ngct("XXXX" + bytes.substr(4)); }) == ErrorCode::IoError);
  std::filesystem::remove(path);
}
