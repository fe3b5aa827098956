#include <cmath>

#include "doctest.h"
#include "ngc/error.hpp"
#include "ngc/init.hpp"
#include "ngc/rng.hpp"
#include "oracles.hpp"

using namespace ngc;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an ngc::Error");
  return ErrorCode::InvalidInput;
}

InitConfig config(std::size_t rank, double lambda = 0.5, std::uint64_t seed = 3) {
  InitConfig c;
  c.rank = rank;
  c.lambda = lambda;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("residual_act") {
  Rng rng = make_rng(40);
  const Matrix w = gaussian_matrix(6, 4, rng), acts = gaussian_matrix(9, 4, rng), c = gaussian_matrix(6, 4, rng);
  CHECK(residual_act(w, w, acts) == 0.0);

  auto loop = [&](const Matrix& cc) {
    double total = 0.0;
    for (std::size_t t = 0; t < acts.rows(); ++t) {
      for (std::size_t i = 0; i < w.rows(); ++i) {
        double diff = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) diff += acts(t, j) * (w(i, j) - cc(i, j));
        total += diff * diff;
      }
    }
    return total;
  };
  CHECK(residual_act(Matrix(6, 4), w, acts) == doctest::Approx(loop(Matrix(6, 4))).epsilon(1e-12));
  CHECK(std::abs(residual_act(c, w, acts) - loop(c)) <= 1e-9 * loop(c));
  CHECK(code_of([&] { residual_act(c, w, gaussian_matrix(9, 5, rng)); }) == ErrorCode::ShapeError);
}

TEST_CASE("residual_weight") {
  Rng rng = make_rng(41);
  const Matrix w = gaussian_matrix(5, 3, rng), c = gaussian_matrix(5, 3, rng);
  CHECK(residual_weight(w, w, 7) == 0.0);
  CHECK(residual_weight(Matrix(5, 3), w, 7) == doctest::Approx(7.0 * std::pow(frobenius_norm(w), 2)));
  double direct = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) direct += 4.0 * (w(i, j) - c(i, j)) * (w(i, j) - c(i, j));
  CHECK(residual_weight(c, w, 4) == doctest::Approx(direct).epsilon(1e-12));
  CHECK(code_of([&] { residual_weight(gaussian_matrix(3, 5, rng), w, 4); }) == ErrorCode::ShapeError);
}

TEST_CASE("gradient flow") {
  Rng rng = make_rng(42);
  const Matrix w = gaussian_matrix(16, 12, rng), acts = gaussian_matrix(40, 12, rng);
  InitConfig cfg = config(12);
  cfg.flow_steps = 0;
  CHECK(init_gradient_flow(w, acts, cfg).c == Matrix(16, 12));

  cfg.flow_steps = 200;
  const FlowResult short_run = init_gradient_flow(w, acts, cfg);
  for (std::size_t i = 1; i < short_run.objective.size(); ++i)
    CHECK(short_run.objective[i] <= short_run.objective[i - 1]);

  cfg.flow_steps = 10000;
  const FlowResult long_run = init_gradient_flow(w, acts, cfg);
  CHECK(frobenius_norm(long_run.c - w) / frobenius_norm(w) < 1e-3);
  CHECK(long_run.objective.back() <= long_run.objective.front());

  cfg.flow_step = 1.0;
  cfg.flow_steps = 50;
  CHECK(code_of([&] { init_gradient_flow(w, acts, cfg); }) == ErrorCode::StepTooLarge);
}

TEST_CASE("config validation") {
  Rng rng = make_rng(43);
  const Matrix w = gaussian_matrix(4, 4, rng), acts = gaussian_matrix(8, 4, rng);
  CHECK(code_of([&] { init_svd_blend(w, acts, config(2, 1.0)); }) == ErrorCode::InvalidInput);
  CHECK(code_of([&] { init_svd_blend(w, acts, config(2, 0.0)); }) == ErrorCode::InvalidInput);
  CHECK(code_of([&] { init_svd_blend(w, acts, config(5)); }) == ErrorCode::RankError);
  CHECK(code_of([&] { init_svd_blend(w, acts, config(0)); }) == ErrorCode::RankError);
}

TEST_CASE("full-rank blend returns W") {
  Rng rng = make_rng(44);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix w = gaussian_matrix(8, 6, rng), acts = gaussian_matrix(20, 6, rng);
    CHECK(frobenius_norm(init_svd_blend(w, acts, config(6)) - w) <= 1e-8 * frobenius_norm(w));
  }
}

TEST_CASE("activation term with identity activations is the plain truncation") {
  Rng rng = make_rng(45);
  const Matrix w = gaussian_matrix(7, 7, rng);
  const BlendTerms t = blend_terms(w, Matrix::identity(7), config(3));
  CHECK(max_abs_diff(t.activation_term.transpose(), truncate(svd(w), 3)) < 1e-10);
}

TEST_CASE("blend matches a step-by-step recomputation") {
  Rng rng = make_rng(46);
  const Matrix w = gaussian_matrix(16, 24, rng), acts = gaussian_matrix(30, 24, rng);
  const InitConfig cfg = config(6, 0.5, 17);
  Rng xr = make_rng(17, 0x626c656e64);
  const Matrix x = gaussian_matrix(30, 24, xr, 1.0 / std::sqrt(30.0));
  const Matrix a_term = matmul(pinv(acts), truncate(svd(matmul_nt(acts, w)), 6));
  const Matrix x_term = matmul(pinv(x), truncate(svd(matmul_nt(x, w)), 6));
  const Matrix expect = (a_term * 0.5 + x_term * 0.5).transpose();
  CHECK(max_abs_diff(init_svd_blend(w, acts, cfg), expect) < 1e-10);
  CHECK(init_svd_blend(w, acts, cfg) == init_svd_blend(w, acts, cfg));
}

TEST_CASE("blend is affine in lambda") {
  Rng rng = make_rng(47);
  const Matrix w = gaussian_matrix(10, 8, rng), acts = gaussian_matrix(20, 8, rng);
  const BlendTerms t = blend_terms(w, acts, config(3));
  for (double lambda : {0.25, 0.5, 0.75}) {
    const Matrix expect = (t.activation_term * lambda + t.random_term * (1.0 - lambda)).transpose();
    CHECK(max_abs_diff(init_svd_blend(w, acts, config(3, lambda)), expect) < 1e-12);
  }
}

TEST_CASE("flow and blend agree at full rank") {
  Rng rng = make_rng(48);
  const Matrix w = gaussian_matrix(6, 5, rng), acts = gaussian_matrix(25, 5, rng);
  InitConfig cfg = config(5);
  cfg.flow_steps = 5000;
  CHECK(frobenius_norm(init_gradient_flow(w, acts, cfg).c - w) / frobenius_norm(w) < 1e-3);
  CHECK(frobenius_norm(init_svd_blend(w, acts, cfg) - w) / frobenius_norm(w) < 1e-3);
}

TEST_CASE("activation-aware init beats plain truncation on concentrated activations") {
  Rng rng = make_rng(49);
  const std::size_t n = 12, r = 3;
  // W's dominant input directions are e_0..e_2; activations live on e_6..e_8.
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = i < r ? 10.0 : 1.0;
  Matrix w(n, n);
  const Matrix u = random_orthogonal(n, rng);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w(i, j) = u(i, j) * s[j];
  Matrix acts(40, n);
  const Matrix coeff = gaussian_matrix(40, r, rng);
  for (std::size_t t = 0; t < 40; ++t)
    for (std::size_t k = 0; k < r; ++k) acts(t, 6 + k) = coeff(t, k);
  const Matrix plain = truncate(svd(w), r);
  const Matrix init = init_svd_blend(w, acts, config(r));
  CHECK(residual_act(init, w, acts) <= residual_act(plain, w, acts));
}

TEST_CASE("states_from_c") {
  Rng rng = make_rng(50);
  const Matrix c = matmul(gaussian_matrix(9, 3, rng), gaussian_matrix(3, 7, rng));
  CHECK(frobenius_norm(reconstruct(states_from_c(c, 3)) - c) <= 1e-8 * frobenius_norm(c));
  CHECK(max_abs_diff(reconstruct(states_from_c(Matrix{{3, 0}, {0, 2}}, 1)), Matrix{{3, 0}, {0, 0}}) < 1e-12);
  const Matrix g = oracle::planted_spectrum(8, 6, {5, 4, 3, 2, 1, 0.5}, rng);
  CHECK(frobenius_norm(reconstruct(states_from_c(g, 2)) - g) == doctest::Approx(std::sqrt(9 + 4 + 1 + 0.25)).epsilon(1e-10));
  CHECK(code_of([&] { states_from_c(c, 8); }) == ErrorCode::RankError);
}
