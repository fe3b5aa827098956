#include <set>

#include "doctest.h"
#include "ngc/error.hpp"
#include "ngc/policy.hpp"
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

const ModelShape kShape{2, 32, 64};

SideKey in(std::size_t l, BlockKind k) { return SideKey{{l, k}, Side::In}; }

}  // namespace

TEST_CASE("parse the documented policy strings") {
  const Policy a = parse_policy("q-k-v@0.3", kShape);
  CHECK(a.merge_sets.empty());
  CHECK(a.ratio == 0.3);
  CHECK(a.replaced_blocks(kShape).size() == 6);

  const Policy b = parse_policy("qq-kk-vv@0.5", kShape);
  REQUIRE(b.merge_sets.size() == 3);
  for (const auto& set : b.merge_sets) {
    REQUIRE(set.size() == 2);
    CHECK(set[0].block.layer == 0);
    CHECK(set[1].block.layer == 1);
    CHECK(set[0].block.kind == set[1].block.kind);
    CHECK(set[0].side == Side::In);
    CHECK(set[1].side == Side::In);
  }

  const Policy c = parse_policy("hybrid:L0.Q.in,L1.V.in@0.5", kShape);
  REQUIRE(c.merge_sets.size() == 1);
  CHECK(c.merge_sets[0] == MergeSet{in(0, BlockKind::Q), in(1, BlockKind::V)});

  const Policy d = parse_policy("kk-qv", kShape);
  REQUIRE(d.merge_sets.size() == 1);
  CHECK(d.merge_sets[0] == MergeSet{in(0, BlockKind::K), in(1, BlockKind::K)});
  CHECK(d.ratio == 1.0);
}

TEST_CASE("parse errors") {
  CHECK(code_of([] { parse_policy("q-k-x", kShape); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_policy("q-q-v", kShape); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_policy("q-k-v@0", kShape); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_policy("q-k-v@1.5", kShape); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_policy("q-k-v@abc", kShape); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_policy("hybrid:L0.Q.in", kShape); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_policy("hybrid:L0.Q.in,L1.Q.in;L0.Q.in,L1.K.in", kShape); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_policy("hybrid:L5.Q.in,L0.Q.in", kShape); }) == ErrorCode::UnknownBlock);
  CHECK(code_of([] { parse_policy("", kShape); }) == ErrorCode::ParseError);
}

TEST_CASE("mixed sides in a named policy are an invalid merge") {
  Policy p;
  p.scope = {BlockKind::Q, BlockKind::K, BlockKind::V};
  p.merge_sets = {{in(0, BlockKind::Q), SideKey{{1, BlockKind::Q}, Side::Out}}};
  CHECK(code_of([&] { normalize(p, kShape); }) == ErrorCode::InvalidMerge);
  p.form = PolicyForm::Hybrid;
  CHECK_NOTHROW(normalize(p, kShape));
}

TEST_CASE("text and JSON round trips over every family") {
  for (double ratio : {0.3, 0.5, 1.0}) {
    for (auto fam : {PolicyFamily::None, PolicyFamily::AdjacentSameKind, PolicyFamily::AdjacentCrossKind,
                     PolicyFamily::HybridBank}) {
      for (const Policy& p : enumerate_policies(ModelShape{4, 32, 64}, fam, ratio)) {
        CHECK(parse_policy(render_policy(p), ModelShape{4, 32, 64}) == p);
        CHECK(policy_from_json(policy_to_json(p), ModelShape{4, 32, 64}) == p);
      }
    }
  }
  const Policy linked = parse_policy("hybrid:L0.K.in,L1.K.in;L0.Q.in,L1.Q.in!0>1:3:2@0.5", kShape);
  REQUIRE(linked.links.size() == 1);
  CHECK(linked.links[0] == InterLink{0, 1, 3, 2});
  CHECK(parse_policy(render_policy(linked), kShape) == linked);
  CHECK(render_policy(parse_policy("  QQ-KK-VV @0.5 ", kShape)) == "qq-kk-vv@0.5");
}

TEST_CASE("enumeration families") {
  const auto none = enumerate_policies(kShape, PolicyFamily::None);
  REQUIRE(none.size() == 1);
  CHECK(render_policy(none[0]) == "q-k-v@1");

  const auto same = enumerate_policies(kShape, PolicyFamily::AdjacentSameKind, 0.5);
  CHECK(same.size() == 8);
  CHECK(render_policy(same.front()) == "q-k-v@0.5");
  bool has_qqkkvv = false;
  for (const auto& p : same) has_qqkkvv |= render_policy(p) == "qq-kk-vv@0.5";
  CHECK(has_qqkkvv);

  // Exhaustive oracle: every non-empty subset of the six off-diagonal
  // (source kind, destination kind) edges that is a matching.
  std::size_t matchings = 0;
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) edges.emplace_back(i, j);
  for (unsigned mask = 1; mask < (1u << edges.size()); ++mask) {
    std::set<int> src, dst;
    bool ok = true;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (!(mask & (1u << e))) continue;
      ok &= src.insert(edges[e].first).second && dst.insert(edges[e].second).second;
    }
    matchings += ok;
  }
  const auto cross = enumerate_policies(kShape, PolicyFamily::AdjacentCrossKind);
  CHECK(cross.size() == matchings + 1);
  std::set<std::string> distinct;
  for (const auto& p : cross) distinct.insert(render_policy(p));
  CHECK(distinct.size() == cross.size());

  const auto bank = enumerate_policies(kShape, PolicyFamily::HybridBank, 0.5);
  REQUIRE(bank.size() == 4);
  CHECK(render_policy(bank[1]) == "hybrid:L0.Q.in,L0.V.in;L0.K.in,L1.K.in;L1.Q.in,L1.V.in@0.5");
}

TEST_CASE("rank_for_budget arithmetic") {
  const ModelShape one{1, 32, 64};
  const Policy single = parse_policy("q-k-v@0.5", one);
  CHECK(rank_for_budget(single, one).block_rank.at({0, BlockKind::Q}) == 8);

  const Policy shared = parse_policy("hybrid:L0.Q.in,L1.Q.in@0.5", kShape);
  const RankAllocation a = rank_for_budget(shared, kShape);
  CHECK(a.block_rank.at({0, BlockKind::Q}) == 10);
  CHECK(a.block_rank.at({1, BlockKind::Q}) == 10);
  REQUIRE(a.merge_set_rank.size() == 1);
  CHECK(a.merge_set_rank[0] == 10);

  const RankAllocation full = rank_for_budget(parse_policy("q-k-v@1.0", kShape), kShape);
  for (const auto& [id, r] : full.block_rank) CHECK(r == 32);

  CHECK(code_of([] { rank_for_budget(parse_policy("q-k-v@0.01", kShape), kShape); }) == ErrorCode::BudgetTooSmall);
}

TEST_CASE("budget audit over every enumerated allocation") {
  for (const ModelShape& shape : {ModelShape{2, 32, 64}, ModelShape{4, 16, 48}}) {
    for (double ratio : {0.15, 0.25, 0.5, 0.7, 0.9}) {
      for (auto fam : {PolicyFamily::AdjacentSameKind, PolicyFamily::AdjacentCrossKind, PolicyFamily::HybridBank}) {
        for (const Policy& p : enumerate_policies(shape, fam, ratio)) {
          for (MetricSpec metric : {MetricSpec{}, MetricSpec{MetricKind::Bilinear, Activation::Tanh, 1.0, 0}}) {
            const RankAllocation a = rank_for_budget(p, shape, metric);
            CHECK(a.within_budget());
            CHECK(static_cast<double>(a.ngc_parameters) <= ratio * static_cast<double>(a.dense_parameters));
          }
        }
      }
    }
  }
}

TEST_CASE("merge_states: shared identity, padding and masking") {
  Rng rng = make_rng(30);
  const ModelShape shape{2, 32, 48};
  const Policy p = parse_policy("hybrid:L0.Q.in,L0.DOWN.in@0.5", shape);
  const RankAllocation alloc = rank_for_budget(p, shape);
  std::map<BlockId, Matrix> targets;
  for (const auto& id : p.replaced_blocks(shape)) {
    const BlockDims d = shape.dims(id.kind);
    targets[id] = gaussian_matrix(d.n_out, d.n_in, rng);
  }
  SharedStates st = merge_states(p, alloc, targets);
  const std::size_t shared = st.state_of(in(0, BlockKind::Q));
  CHECK(shared == st.state_of(in(0, BlockKind::DOWN)));
  CHECK(st.states[shared].rows() == 48);
  CHECK(st.states[shared].cols() == alloc.merge_set_rank[0]);

  const Matrix before = reconstruct(st.view({0, BlockKind::Q}));
  for (std::size_t r = 32; r < 48; ++r)
    for (std::size_t c = 0; c < st.states[shared].cols(); ++c) st.states[shared](r, c) = 1e3 * static_cast<double>(r + c);
  CHECK(reconstruct(st.view({0, BlockKind::Q})) == before);
  CHECK(st.parameter_count() <= alloc.ngc_parameters);
}

TEST_CASE("merge_states: identical members reproduce the standalone truncation") {
  Rng rng = make_rng(31);
  const Policy p = parse_policy("qq-kk-vv@0.5", kShape);
  const RankAllocation alloc = rank_for_budget(p, kShape);
  std::map<BlockId, Matrix> targets;
  std::map<BlockKind, Matrix> by_kind;
  for (BlockKind k : {BlockKind::Q, BlockKind::K, BlockKind::V}) by_kind[k] = gaussian_matrix(32, 32, rng);
  for (const auto& id : p.replaced_blocks(kShape)) targets[id] = by_kind.at(id.kind);
  const SharedStates st = merge_states(p, alloc, targets);
  for (const auto& id : p.replaced_blocks(kShape)) {
    const std::size_t r = alloc.block_rank.at(id);
    CHECK(max_abs_diff(reconstruct(st.view(id)), reconstruct(factorize_block(targets.at(id), r))) < 1e-6);
  }
  CHECK(st.state_of(in(0, BlockKind::Q)) == st.state_of(in(1, BlockKind::Q)));
  CHECK(st.state_of(in(0, BlockKind::Q)) != st.state_of(in(0, BlockKind::K)));
}

TEST_CASE("delayed links compile to a shift register") {
  Rng rng = make_rng(32);
  CHECK(compile_delayed_link(InterLink{0, 1, 0, 1}, 4).extra_state_dim() == 0);
  for (auto [d, hold] : {std::pair<std::size_t, std::size_t>{3, 1}, {0, 2}, {2, 2}, {8, 4}}) {
    const AugmentedSharing link = compile_delayed_link(InterLink{0, 1, d, hold}, 3);
    CHECK(link.state_dim() == (d + 1) * 3 + (hold > 1 ? 3 : 0));
    const Matrix z = gaussian_matrix(64, 3, rng);
    const Matrix expect = oracle::from_dense(oracle::delayed_hold_link(oracle::to_dense(z), d, hold));
    CHECK(max_abs_diff(link.run(z), expect) <= 1e-12);
  }
}
