#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ngc/block.hpp"
#include "ngc/groups.hpp"
#include "ngc/linalg.hpp"
#include "ngc/netmodel.hpp"
#include "ngc/rng.hpp"

namespace ngc {

// Row-vector convention throughout: A_{t+1} ≈ A_t·T.

struct SideProjection {
  Matrix t_trs;  // N x N
  Matrix t_com;  // N x N
};

struct StateProjection {
  Matrix h_trs;  // r x r*
  Matrix h_com;  // r* x r*
};

struct ProjectionSet {
  std::map<SideKey, SideProjection> sides;
  std::map<BlockId, StateProjection> states;
  double lambda = 0.5;
};

/// Two-point state trajectory per block. Each matrix stacks the block's
/// output-side states over its input-side states ((N_out + N_in) x rank).
struct StateSnapshots {
  std::map<BlockId, Matrix> root;      // rank r
  std::map<BlockId, Matrix> com_prev;  // rank r*
  std::map<BlockId, Matrix> com;       // rank r*
};

Matrix stacked_states(const StateBlock& b);

/// Regresses A^com[1..T) on [λ·A^root[1..T) | (1 − λ)·A^com[0..T−1)] and,
/// per block, Q^com on [λ·Q^root | (1 − λ)·Q^com_prev]. Throws
/// InsufficientData when T < 2.
SideProjection fit_side(const Matrix& root, const Matrix& com, double lambda, double ridge = kDefaultRidge);
StateProjection fit_states(const Matrix& root, const Matrix& com_prev, const Matrix& com, double lambda,
                           double ridge = kDefaultRidge);
ProjectionSet fit_projections(const ActivationTrace& root, const ActivationTrace& com,
                              const std::vector<BlockId>& blocks, const StateSnapshots& snapshots, double lambda,
                              double ridge = kDefaultRidge);

struct SideResiduals {
  Vector grad_t_trs;  // length N
  Vector grad_t_com;
};

struct StateResiduals {
  Vector grad_h_trs;  // length r*
  Vector grad_h_com;
};

struct ResidualSet {
  std::map<SideKey, SideResiduals> sides;
  std::map<BlockId, StateResiduals> states;
};

/// Sign-preserving denominator guard: values with |a| < ε become ±ε.
double clamp_denominator(double a, double epsilon);

/// (1/T)·Σ_t (A^root_t·T_trs − A^com_t) ⊘ A^com_t and
/// (1/(T−1))·Σ_t (A^com_t·T_com − A^com_{t+1}) ⊘ A^com_{t+1}.
SideResiduals side_residuals(const Matrix& root, const Matrix& com, const SideProjection& p, double epsilon);
/// Row means of (Q^root·H_trs − Q^com) ⊘ Q^com and (Q^com_prev·H_com − Q^com) ⊘ Q^com.
StateResiduals state_residuals(const Matrix& root, const Matrix& com_prev, const Matrix& com,
                               const StateProjection& p, double epsilon);
ResidualSet compute_residuals(const ActivationTrace& root, const ActivationTrace& com,
                              const StateSnapshots& snapshots, const ProjectionSet& projections, double epsilon);

/// Output-coordinate gains ‖M[:, j]‖₂ of a projection acting on row vectors.
Vector column_gains(const Matrix& m);

/// Columns [trs, ∇trs, com, ∇com]; N rows from the activation terms plus r*
/// rows from the state terms when the block has them.
Matrix build_phi(const SideProjection& p, const SideResiduals& r, const StateProjection* sp = nullptr,
                 const StateResiduals* sr = nullptr);
std::map<SideKey, Matrix> build_phi(const ProjectionSet& projections, const ResidualSet& residuals);

enum class ScoreNorm { Frobenius, Spectral };

struct StabilityConfig {
  Matrix f_metric = Matrix::identity(4);    // default F_x
  std::map<BlockId, Matrix> f_per_block;    // overrides
  double alpha = 1.0;
  double beta = 1.0;
  double epsilon = 1e-8;
  ScoreNorm norm = ScoreNorm::Frobenius;

  const Matrix& f_for(const BlockId& id) const;
};

/// S = Σ ‖Φ·F·Φᵀ‖. Throws NotPositiveDefinite when an F is not symmetric
/// positive-semidefinite.
double stability_score(const std::map<SideKey, Matrix>& phis, const StabilityConfig& cfg);

/// Σ [ln(σ_max(T_trs)/σ_max(T_com)) − α·mean|∇T_com| − β·mean|∇H_com|].
/// Throws DegenerateDynamics when a σ_max vanishes.
double stability_score_approx(const ProjectionSet& projections, const ResidualSet& residuals,
                              const StabilityConfig& cfg);

/// Iterates A^com_{t+1} = λ·A^root_{t+1}·T_trs + (1 − λ)·A^com_t·T_com + δ_t
/// from `a0`; disturbance rows beyond the schedule are zero.
Matrix simulate_updates(const Matrix& root, const SideProjection& p, double lambda, const Matrix& a0,
                        const std::optional<Matrix>& disturbances = std::nullopt);
/// Applies simulate_updates to every fitted side, starting from the root's
/// first row.
ActivationTrace simulate_com_updates(const ActivationTrace& root, const ProjectionSet& projections,
                                     const std::map<SideKey, Matrix>& disturbances = {});

/// Error recursions e_{t+1} = e_t·M_t + δ_t for the activation and state
/// parts of a coupled system.
struct ErrorSystem {
  std::vector<Matrix> m_a, m_q;          // per step transition
  std::vector<Matrix> delta_a, delta_q;  // per step 1 x n rows
  Matrix e0_a, e0_q;                     // 1 x n rows

  std::size_t horizon() const { return m_a.size(); }
};

/// ρ = sup_t max{‖M^A_t‖₂, ‖M^Q_t‖₂}.
double contraction_modulus(const ErrorSystem& sys);
/// S = sup_t (‖δ^A_t‖ + ‖δ^Q_t‖).
double disturbance_level(const ErrorSystem& sys);
/// max{‖e^A_t‖, ‖e^Q_t‖} for t = 0..horizon.
Vector simulate_deviation(const ErrorSystem& sys);

/// Random time-varying system: M_0 has spectral norm exactly rho, the rest
/// uniform in [0.5, 1]·rho; Gaussian disturbances and initial errors.
ErrorSystem random_error_system(std::size_t n_a, std::size_t n_q, std::size_t horizon, double rho,
                                double disturbance_scale, Rng& rng);
ErrorSystem scaled_disturbances(const ErrorSystem& sys, double scale);

struct IssReport {
  std::size_t trials = 0;
  std::size_t violations = 0;
  std::size_t not_contractive = 0;  // systems rejected because ρ ≥ 1
  double rho = 0.0;                 // largest ρ seen
  double max_slack = 0.0;           // largest bound − deviation
  double min_slack = 0.0;           // smallest bound − deviation (negative on violation)
};

/// ρ^t·max{‖e^A_0‖, ‖e^Q_0‖} + S/(1 − ρ).
double iss_bound(double rho, double e0, double s, std::size_t t);

/// Checks the deviation bound at every step. A system with ρ ≥ 1 is
/// counted in not_contractive rather than thrown.
IssReport iss_bound_check(const ErrorSystem& sys);
IssReport iss_bound_check(std::size_t horizon, std::size_t trials, std::uint64_t seed, double rho_max = 0.9,
                          std::size_t n_a = 8, std::size_t n_q = 4);

struct LossGapReport {
  std::size_t steps = 0;
  std::size_t violations = 0;  // per-step |Δℓ| > L·‖e^A_t‖
  bool average_holds = true;
  double lipschitz = 0.0;
  double mean_gap = 0.0;
  double average_bound = 0.0;
  double max_gap = 0.0;
};

/// Decoder ℓ(a) = ‖a·D − y*‖ with L = σ_max(D), evaluated on root rows and
/// root + e^A_t.
LossGapReport loss_gap_check(const ErrorSystem& sys, const Matrix& root_rows, const Matrix& decoder,
                             const Matrix& target_row);
/// Monte-Carlo version; violations are summed over trials.
LossGapReport loss_gap_check(std::size_t horizon, std::size_t trials, std::uint64_t seed, double rho_max = 0.9);

struct PotentialReport {
  double scale = 1.0;
  double s = 0.0;            // disturbance level after scaling
  double rho = 0.0;
  double bound_term = 0.0;   // S/(1 − ρ)
  double max_deviation = 0.0;
  double departure = 0.0;    // max_t ‖e_t − e_t^{routine}‖, routine = disturbance-free
  std::size_t violations = 0;
};

PotentialReport external_potential_test(const ErrorSystem& base, double scale);

/// Per-system sweep over `scales`; reports the number of systems where the
/// bound was violated or the departure / bound failed to grow with scale.
struct PotentialSweep {
  std::vector<double> scales;
  std::size_t trials = 0;
  std::size_t violations = 0;
  std::size_t non_monotone = 0;
  std::vector<PotentialReport> first_trial;
};

PotentialSweep external_potential_sweep(const std::vector<double>& scales, std::size_t trials, std::uint64_t seed,
                                        double rho_max = 0.9);

/// Score summary for one com system against its root.
struct StabilityReport {
  ProjectionSet projections;
  ResidualSet residuals;
  std::map<SideKey, Matrix> phis;
  double s = 0.0;
  double s_approx = 0.0;
  double rho = 0.0;
  bool contractive = false;
  IssReport iss;  // fitted error recursion, checked only when contractive
};

StabilityReport score_system(const ActivationTrace& root, const ActivationTrace& com, const std::vector<BlockId>& blocks,
                             const StateSnapshots& snapshots, double lambda, const StabilityConfig& cfg);

std::string stability_report_json(const StabilityReport& report, double lambda, const StabilityConfig& cfg);

}  // namespace ngc
