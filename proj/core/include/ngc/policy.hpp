#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ngc/block.hpp"
#include "ngc/groups.hpp"
#include "ngc/linalg.hpp"

namespace ngc {

using MergeSet = std::vector<SideKey>;

/// Delayed and/or sample-and-hold link between two merge sets. delay = 0 and
/// hold_period = 1 is instantaneous synchronous sharing.
struct InterLink {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::size_t delay = 0;
  std::size_t hold_period = 1;

  friend bool operator==(const InterLink&, const InterLink&) = default;
};

enum class PolicyForm { Named, Hybrid };

/// Communication topology over the replaced blocks.
///
/// Textual grammar:
///   named   `q-k-v`, `qq-kk-vv`, `kk-qv`: each token lists kinds; a doubled
///           kind (`qq`) merges that kind's input side across disjoint
///           adjacent layer pairs (0,1), (2,3), ...; other kinds stay
///           standalone.
///   hybrid  `hybrid:<set>;<set>;...` with comma-separated `L<l>.<kind>.<side>`
///           items; the replaced scope is Q, K, V plus any kind mentioned.
///   links   optional `!<src>><dst>:<delay>:<hold>` groups before the ratio.
///   ratio   optional `@<ratio>` suffix in (0, 1].
struct Policy {
  PolicyForm form = PolicyForm::Named;
  std::vector<BlockKind> scope;  // kinds replaced in every layer, canonical order
  std::vector<MergeSet> merge_sets;
  std::vector<InterLink> links;
  double ratio = 1.0;

  std::vector<BlockId> replaced_blocks(const ModelShape& shape) const;
  /// Index of the merge set containing `key`, if any.
  std::optional<std::size_t> merge_set_of(const SideKey& key) const;

  friend bool operator==(const Policy&, const Policy&) = default;
};

/// Sorts items within sets and sets lexicographically; validates
/// disjointness and block existence.
void normalize(Policy& p, const ModelShape& shape);

Policy parse_policy(std::string_view spec, const ModelShape& shape, double default_ratio = 1.0);
std::string render_policy(const Policy& p);

std::string policy_to_json(const Policy& p);
Policy policy_from_json(const std::string& text, const ModelShape& shape);

enum class PolicyFamily { None, AdjacentSameKind, AdjacentCrossKind, HybridBank };

std::optional<PolicyFamily> parse_policy_family(std::string_view text);
std::string_view to_string(PolicyFamily family);

/// Deterministic order, identity policy (`q-k-v`) first. Candidate kinds are
/// the attention projections Q, K, V.
std::vector<Policy> enumerate_policies(const ModelShape& shape, PolicyFamily family, double ratio = 1.0);

/// The documented hybrid bank for `shape`, without the identity policy.
std::vector<std::string> hybrid_bank_specs(const ModelShape& shape);

/// Metric attached to every replaced block; trainable metrics count
/// against the budget.
struct MetricSpec {
  MetricKind kind = MetricKind::DotProduct;
  Activation activation = Activation::Tanh;
  double r_tilde_factor = 1.0;  // r̃ = ceil(factor · r)
  std::uint64_t seed = 0;

  std::size_t r_tilde(std::size_t r) const;
  std::size_t parameters(std::size_t r) const;
  IntraMetric instantiate(std::size_t r, std::uint64_t stream) const;
};

struct RankAllocation {
  std::map<BlockId, std::size_t> block_rank;
  std::vector<std::size_t> merge_set_rank;
  std::size_t ngc_parameters = 0;
  std::size_t dense_parameters = 0;
  double ratio = 1.0;

  /// Exact audit: ngc_parameters ≤ ratio · dense_parameters. A ratio of 1
  /// requests the uncompressed full-rank realization and is exempt.
  bool within_budget() const;
};

/// Blocks connected through merge sets form one component sharing a single
/// rank r* = floor(ratio · Σ dense / Σ state rows), clamped to the smallest
/// block dimension. A standalone block reduces to
/// r = floor(ratio · N_out·N_in / (N_out + N_in)). Ratio 1 allocates full
/// rank so the com model can realize the root exactly. Throws
/// BudgetTooSmall when a component cannot afford rank 1.
RankAllocation rank_for_budget(const Policy& policy, const ModelShape& shape, const MetricSpec& metric = {});

/// Physical state storage for a com model. Members of one merge set bind
/// the same state index; a member with fewer neurons than the shared
/// matrix reads only its leading rows (the rest are masked for it).
struct StateBinding {
  std::size_t out_state = 0;
  std::size_t in_state = 0;
  std::size_t out_rows = 0;
  std::size_t in_rows = 0;
};

struct SharedStates {
  std::vector<Matrix> states;
  std::vector<std::string> state_names;
  std::map<BlockId, StateBinding> bindings;
  std::map<BlockId, IntraMetric> metrics;

  StateBlock view(const BlockId& id) const;
  std::size_t state_of(const SideKey& key) const;
  std::size_t parameter_count() const;
};

/// Builds shared states for `policy` from per-block target matrices
/// (N_out x N_in). Each merge set is initialized from the SVD of its
/// members stacked along the shared side (zero-padded to the largest
/// member); private sides are then fitted by least squares.
SharedStates merge_states(const Policy& policy, const RankAllocation& allocation,
                          const std::map<BlockId, Matrix>& targets, const MetricSpec& metric = {});

/// Instantaneous-sharing realization of a delayed / zero-order-hold link:
/// an augmented state holding a shift register [z_t, …, z_{t−d}] plus a hold
/// register, read out linearly at every step.
class AugmentedSharing {
 public:
  AugmentedSharing(std::size_t delay, std::size_t hold_period, std::size_t signal_dim);

  std::size_t delay() const { return delay_; }
  std::size_t hold_period() const { return hold_; }
  std::size_t signal_dim() const { return dim_; }
  std::size_t state_dim() const;
  std::size_t extra_state_dim() const { return state_dim() - dim_; }

  /// Shift-register transition (state_dim x state_dim, acting on row vectors).
  const Matrix& shift() const { return shift_; }

  /// Runs the augmented system over rows of `signal` (T x signal_dim) and
  /// returns the receiver-side readout for every step.
  Matrix run(const Matrix& signal) const;

 private:
  std::size_t delay_;
  std::size_t hold_;
  std::size_t dim_;
  Matrix shift_;
  Matrix inject_;   // signal_dim x register_dim
  Matrix readout_;  // register_dim x signal_dim, selects z_{t−d}
};

AugmentedSharing compile_delayed_link(const InterLink& link, std::size_t signal_dim);

}  // namespace ngc
