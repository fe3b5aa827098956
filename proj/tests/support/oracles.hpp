#pragma once

// Reference implementations used as test oracles. They are written with
// plain loops over std::vector and share no code with the library beyond
// the data types they read.

#include <cstddef>
#include <vector>

#include "ngc/block.hpp"
#include "ngc/groups.hpp"
#include "ngc/linalg.hpp"
#include "ngc/netmodel.hpp"
#include "ngc/rng.hpp"

namespace oracle {

using Dense = std::vector<std::vector<double>>;

Dense to_dense(const ngc::Matrix& m);
ngc::Matrix from_dense(const Dense& d);

Dense matmul(const Dense& a, const Dense& b);
Dense transpose(const Dense& a);
double frobenius(const Dense& a);

/// Gram–Schmidt orthonormal columns of a Gaussian m x k matrix.
Dense orthonormal_columns(std::size_t m, std::size_t k, ngc::Rng& rng);

/// U·diag(s)·Vᵀ with random orthonormal U (m x k) and V (n x k).
ngc::Matrix planted_spectrum(std::size_t m, std::size_t n, const std::vector<double>& s, ngc::Rng& rng);

/// Largest singular value by power iteration on AᵀA.
double power_sigma_max(const ngc::Matrix& a, std::size_t iterations = 2000);

/// Ŵ[i][j] = ⟨σ(q_out[i]·G_L), σ(q_in[j]·G_R)⟩ evaluated entry by entry.
Dense entrywise_reconstruct(const ngc::StateBlock& b);

/// Toy transformer forward pass with explicit loops; returns logits.
Dense reference_forward(const ngc::RootModel& m, const std::vector<int>& tokens);

/// y_t = z_{s(t) − d} with s(t) = t − (t mod hold); zero before the link fills.
Dense delayed_hold_link(const Dense& z, std::size_t delay, std::size_t hold);

/// com_{t+1} = λ·root_{t+1}·T_trs + (1 − λ)·com_t·T_com + δ_t from com_0 = a0.
Dense step_loop_updates(const Dense& root, const Dense& t_trs, const Dense& t_com, double lambda,
                        const std::vector<double>& a0, const Dense& disturbances);

/// max over t of max{‖e^A_t‖, ‖e^Q_t‖} for the recursion e_{t+1} = e_t·M_t + δ_t.
std::vector<double> step_loop_deviation(const std::vector<Dense>& m_a, const std::vector<Dense>& m_q,
                                        const std::vector<std::vector<double>>& d_a,
                                        const std::vector<std::vector<double>>& d_q, std::vector<double> e_a,
                                        std::vector<double> e_q);

/// Spearman correlation by the rank-difference formula (no ties).
double spearman_no_ties(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace oracle
