#pragma once

#include <cstdint>
#include <vector>

#include "ngc/groups.hpp"
#include "ngc/linalg.hpp"

namespace ngc {

struct InitConfig {
  double lambda = 0.5;
  std::size_t rank = 0;
  double flow_step = 1e-3;
  std::size_t flow_steps = 0;
  std::uint64_t seed = 0;
  double epsilon = 1e-8;

  /// Throws InvalidInput unless 0 < lambda < 1, flow_step > 0 and
  /// 0 < epsilon <= 1e-6.
  void validate() const;
};

// Weights are N_out x N_in and act on activation rows: y_t = a_t·wᵀ.

/// Σ_t ‖a_t·wᵀ − a_t·cᵀ‖².
double residual_act(const Matrix& c, const Matrix& w, const Matrix& acts);
/// t_count·‖w − c‖_F².
double residual_weight(const Matrix& c, const Matrix& w, std::size_t t_count);

/// λ·residual_act + (1 − λ)·residual_weight with T = acts.rows().
double init_objective(const Matrix& c, const Matrix& w, const Matrix& acts, double lambda);

struct FlowResult {
  Matrix c;
  std::vector<double> objective;  // J(C_0), then J after every step
};

/// Explicit Euler on dC/dt = −∇J(C) from C_0 = 0. Throws StepTooLarge when J
/// rises on 10 consecutive steps.
FlowResult init_gradient_flow(const Matrix& w, const Matrix& acts, const InitConfig& cfg);

/// The two transposed terms of the blend, pinv(𝒜)·SVD_r[𝒜·wᵀ] and
/// pinv(𝒳)·SVD_r[𝒳·wᵀ], each N_in x N_out.
struct BlendTerms {
  Matrix activation_term;
  Matrix random_term;
};

BlendTerms blend_terms(const Matrix& w, const Matrix& acts, const InitConfig& cfg);

/// C = (λ·activation_term + (1 − λ)·random_term)ᵀ. 𝒳 is Gaussian with the
/// shape of acts and entries scaled by 1/√T.
Matrix init_svd_blend(const Matrix& w, const Matrix& acts, const InitConfig& cfg);

/// Truncated-SVD states of c with `metric` attached (rank must match).
StateBlock states_from_c(const Matrix& c, std::size_t r_star, const IntraMetric& metric = {});

}  // namespace ngc
