#include "ngc/init.hpp"

#include <cmath>

#include "ngc/error.hpp"
#include "ngc/rng.hpp"

namespace ngc {
namespace {

void check_shapes(const Matrix& c, const Matrix& w) {
  require(c.rows() == w.rows() && c.cols() == w.cols(), ErrorCode::ShapeError, "c and w must have equal shapes");
}

void check_acts(const Matrix& w, const Matrix& acts) {
  require(acts.cols() == w.cols(), ErrorCode::ShapeError, "activation width must equal N_in");
}

double squared_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return s;
}

Matrix truncated_reconstruction(const Matrix& m, std::size_t r) {
  const SvdResult sv = svd(m);
  require(r >= 1 && r <= sv.s.size(), ErrorCode::RankError, "rank out of range for the blend");
  return truncate(sv, r);
}

}  // namespace

void InitConfig::validate() const {
  require(lambda > 0.0 && lambda < 1.0, ErrorCode::InvalidInput, "lambda must lie strictly inside (0, 1)");
  require(flow_step > 0.0, ErrorCode::InvalidInput, "flow step must be positive");
  require(epsilon > 0.0 && epsilon <= 1e-6, ErrorCode::InvalidInput, "epsilon must lie in (0, 1e-6]");
}

double residual_act(const Matrix& c, const Matrix& w, const Matrix& acts) {
  check_shapes(c, w);
  check_acts(w, acts);
  return squared_norm(matmul_nt(acts, w - c));
}

double residual_weight(const Matrix& c, const Matrix& w, std::size_t t_count) {
  check_shapes(c, w);
  return static_cast<double>(t_count) * squared_norm(w - c);
}

double init_objective(const Matrix& c, const Matrix& w, const Matrix& acts, double lambda) {
  return lambda * residual_act(c, w, acts) + (1.0 - lambda) * residual_weight(c, w, acts.rows());
}

FlowResult init_gradient_flow(const Matrix& w, const Matrix& acts, const InitConfig& cfg) {
  cfg.validate();
  check_acts(w, acts);
  const Matrix gram = matmul_tn(acts, acts);
  const double weight_scale = 2.0 * (1.0 - cfg.lambda) * static_cast<double>(acts.rows());

  FlowResult out{Matrix(w.rows(), w.cols()), {}};
  out.objective.reserve(cfg.flow_steps + 1);
  out.objective.push_back(init_objective(out.c, w, acts, cfg.lambda));
  std::size_t rising = 0;
  for (std::size_t step = 0; step < cfg.flow_steps; ++step) {
    const Matrix e = out.c - w;
    // ∇J = 2λ·E·𝒜ᵀ𝒜 + 2(1 − λ)·T·E
    Matrix grad = matmul(e, gram) * (2.0 * cfg.lambda);
    grad += e * weight_scale;
    out.c -= grad * cfg.flow_step;
    const double j = init_objective(out.c, w, acts, cfg.lambda);
    require(std::isfinite(j), ErrorCode::StepTooLarge, "gradient flow diverged");
    rising = j > out.objective.back() ? rising + 1 : 0;
    out.objective.push_back(j);
    if (rising >= 10) fail(ErrorCode::StepTooLarge, "objective increased on 10 consecutive steps");
  }
  return out;
}

BlendTerms blend_terms(const Matrix& w, const Matrix& acts, const InitConfig& cfg) {
  check_acts(w, acts);
  require(cfg.rank >= 1 && cfg.rank <= std::min(w.rows(), w.cols()), ErrorCode::RankError,
          "blend rank must lie in [1, min(N_out, N_in)]");
  const std::size_t t = acts.rows();
  Rng rng = make_rng(cfg.seed, 0x626c656e64);
  const Matrix x = gaussian_matrix(t, acts.cols(), rng, 1.0 / std::sqrt(static_cast<double>(t)));
  return {matmul(pinv(acts), truncated_reconstruction(matmul_nt(acts, w), cfg.rank)),
          matmul(pinv(x), truncated_reconstruction(matmul_nt(x, w), cfg.rank))};
}

Matrix init_svd_blend(const Matrix& w, const Matrix& acts, const InitConfig& cfg) {
  cfg.validate();
  const BlendTerms terms = blend_terms(w, acts, cfg);
  Matrix ct = terms.activation_term * cfg.lambda;
  ct += terms.random_term * (1.0 - cfg.lambda);
  return ct.transpose();
}

StateBlock states_from_c(const Matrix& c, std::size_t r_star, const IntraMetric& metric) {
  StateBlock b = factorize_block(c, r_star, "C");
  b.metric = metric;
  validate(b);
  return b;
}

}  // namespace ngc
