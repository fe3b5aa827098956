#include <benchmark/benchmark.h>

#include "ngc/dynamics.hpp"
#include "ngc/groups.hpp"
#include "ngc/linalg.hpp"
#include "ngc/netmodel.hpp"
#include "ngc/policy.hpp"

using namespace ngc;

static void BM_Svd(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(1);
  const Matrix a = gaussian_matrix(n, n + n / 2, rng);
  for (auto _ : state) benchmark::DoNotOptimize(svd(a));
}
BENCHMARK(BM_Svd)->Arg(16)->Arg(32)->Arg(64);

static void BM_Pinv(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(2);
  const Matrix a = gaussian_matrix(4 * n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(pinv(a));
}
BENCHMARK(BM_Pinv)->Arg(16)->Arg(32)->Arg(64);

static void BM_ForwardRoot(benchmark::State& state) {
  ToyConfig cfg;
  const RootModel m = init_root(cfg);
  std::vector<int> tokens(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(i % cfg.vocab);
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, tokens));
}
BENCHMARK(BM_ForwardRoot)->Arg(8)->Arg(32);

static void BM_ForwardCom(benchmark::State& state) {
  ToyConfig cfg;
  const RootModel root = init_root(cfg);
  const Policy p = parse_policy("qq-kk-vv@0.5", cfg.shape());
  const RankAllocation alloc = rank_for_budget(p, cfg.shape());
  std::map<BlockId, Matrix> targets;
  for (const auto& id : p.replaced_blocks(cfg.shape())) targets[id] = root.weights.at(id);
  const ComModel com = replace_blocks(root, p, merge_states(p, alloc, targets));
  std::vector<int> tokens(32);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(i % cfg.vocab);
  for (auto _ : state) benchmark::DoNotOptimize(forward(com, tokens));
}
BENCHMARK(BM_ForwardCom);

static void BM_ScoreSide(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(3);
  const Matrix root = gaussian_matrix(256, n, rng), com = gaussian_matrix(256, n, rng);
  StabilityConfig cfg;
  const SideKey key{{0, BlockKind::Q}, Side::In};
  for (auto _ : state) {
    ProjectionSet ps;
    ps.sides[key] = fit_side(root, com, 0.5);
    ResidualSet rs;
    rs.sides[key] = side_residuals(root, com, ps.sides[key], cfg.epsilon);
    benchmark::DoNotOptimize(stability_score(build_phi(ps, rs), cfg));
    benchmark::DoNotOptimize(stability_score_approx(ps, rs, cfg));
  }
}
BENCHMARK(BM_ScoreSide)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
