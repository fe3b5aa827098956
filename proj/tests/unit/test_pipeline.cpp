#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ngc/error.hpp"
#include "ngc/pipeline.hpp"
#include "ngc/verify.hpp"
#include "oracles.hpp"

using namespace ngc;

namespace {

RunConfig small_run() {
  RunConfig c;
  c.model.layers = 2;
  c.model.d_model = 16;
  c.model.d_ff = 32;
  c.model.vocab = 8;
  c.model.context = 8;
  c.task.vocab = 8;
  c.task.length = 8;
  c.train_steps = 400;
  c.capture_tokens = 64;
  c.finetune_steps = 20;
  c.eval_samples = 200;
  c.seed = 21;
  return c;
}

std::vector<RankingRow> sample_rows() {
  RankingRow a{"q-k-v@0.5", 77004.25, 53.18, 3072, 6144, 0.9375, 1.0, 0.42, false};
  RankingRow b{"hybrid:L0.Q.in,L0.V.in;L0.K.in,L1.K.in;L1.Q.in,L1.V.in@0.5", 1.37e7, -210.7, 2880, 6144, 0.83, 1.0,
               0.1, true};
  return {a, b};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("ranking CSV round trip") {
  const auto rows = sample_rows();
  const std::string csv = ranking_to_csv(rows);
  CHECK(csv.rfind("policy,S,S_approx,params,dense_params,acc_before,acc_after,rho,selected\n", 0) == 0);
  CHECK(ranking_from_csv(csv) == rows);
  CHECK(ranking_to_csv({}) == "policy,S,S_approx,params,dense_params,acc_before,acc_after,rho,selected\n");
  CHECK(ranking_from_csv(ranking_to_csv({})).empty());
  CHECK_THROWS_AS(ranking_from_csv("nonsense\n1,2"), Error);
}

TEST_CASE("report JSON") {
  PipelineReport rep;
  rep.config = small_run();
  rep.rows = sample_rows();
  rep.selected = 1;
  rep.stability_json = {"{}", "{}"};
  const std::string js = report_to_json(rep);
  CHECK(js.find("\"schema_version\": \"1\"") != std::string::npos);
  CHECK(js == report_to_json(rep));
  CHECK(js.find("\"spearman_neg_s_approx_vs_accuracy\": null") != std::string::npos);

  const auto dir = std::filesystem::temp_directory_path() / "ngc_test_pipeline_export";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  export_report(rep, ReportFormat::Csv, dir / "r.csv");
  CHECK(ranking_from_csv(slurp(dir / "r.csv")) == rep.rows);
  export_report(rep, ReportFormat::Json, dir / "r.json");
  CHECK(slurp(dir / "r.json") == js);
  std::filesystem::remove_all(dir);
}

TEST_CASE("run config JSON round trip") {
  RunConfig c = small_run();
  c.policies = {"qq-kk-vv@0.25", "hybrid"};
  c.selection = Selection::MinS;
  const RunConfig back = run_config_from_json(run_config_to_json(c));
  CHECK(run_config_to_json(back) == run_config_to_json(c));
  CHECK(back.model == c.model);
  CHECK(run_config_from_json("{}").ratio == 0.5);
  CHECK_THROWS_AS(run_config_from_json("{\"ratio\": 1.5}"), Error);
  CHECK_THROWS_AS(run_config_from_json("{\"selection\": \"max\"}"), Error);
}

TEST_CASE("policy resolution") {
  const ModelShape shape{2, 32, 64};
  CHECK(render_policy(resolve_policy("hybrid", shape, 0.5)) ==
        "hybrid:L0.Q.in,L0.V.in;L0.K.in,L1.K.in;L1.Q.in,L1.V.in@0.5");
  CHECK(render_policy(resolve_policy("q-k-v", shape, 0.3)) == render_policy(parse_policy("q-k-v@0.3", shape)));
  CHECK(render_policy(resolve_policy("q-k-v@0.7", shape, 0.3)) == render_policy(parse_policy("q-k-v@0.7", shape)));
}

TEST_CASE("selection") {
  auto rows = sample_rows();
  rows.push_back({"x", 5.0, 0.0, 1, 2, 0, 0, 0, false});
  CHECK(select_policy(rows, Selection::MinSApprox) == 1u);
  CHECK(select_policy(rows, Selection::MinS) == 2u);
  CHECK_FALSE(select_policy(rows, Selection::ReportOnly).has_value());
  CHECK_FALSE(select_policy({}, Selection::MinS).has_value());
  CHECK(parse_selection("min-s-approx") == Selection::MinSApprox);
  CHECK_FALSE(parse_selection("best").has_value());
}

TEST_CASE("spearman") {
  Rng rng = make_rng(80);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(9), b(9);
    for (auto& v : a) v = g(rng);
    for (auto& v : b) v = g(rng);
    CHECK(*spearman(a, b) == doctest::Approx(oracle::spearman_no_ties(a, b)).epsilon(1e-12));
  }
  CHECK(*spearman({1, 2, 3}, {10, 20, 30}) == doctest::Approx(1.0));
  CHECK(*spearman({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  // Ranks with ties: a → (1, 2.5, 2.5, 4), b → (1, 2, 3, 4); Pearson on ranks.
  CHECK(*spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(4.5 / std::sqrt(4.5 * 5.0)));
  CHECK_FALSE(spearman({1, 1, 1}, {1, 2, 3}).has_value());
  CHECK_FALSE(spearman({1}, {1}).has_value());
}

TEST_CASE("parallel_for") {
  std::vector<std::atomic<int>> hits(50);
  parallel_for(50, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10,
                               [](std::size_t i) {
                                 if (i == 7) fail(ErrorCode::InvalidInput, "boom");
                               }),
                  Error);

  const char* old = std::getenv("NGC_THREADS");
  const std::string saved = old ? old : "";
  setenv("NGC_THREADS", "3", 1);
  CHECK(thread_limit() == 3);
  setenv("NGC_THREADS", "0", 1);
  CHECK(thread_limit() == 1);
  if (old)
    setenv("NGC_THREADS", saved.c_str(), 1);
  else
    unsetenv("NGC_THREADS");
}

TEST_CASE("full-rank pipeline matches the root") {
  RunConfig c = small_run();
  c.policies = {"q-k-v@1.0"};
  const PipelineReport rep = run_pipeline(c);
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.selected == 0u);
  CHECK(std::abs(rep.rows[0].acc_before - rep.root_accuracy) <= 0.01);
  CHECK(std::abs(rep.rows[0].acc_after - rep.root_accuracy) <= 0.01);
  CHECK_FALSE(rep.spearman.has_value());
}

TEST_CASE("pipeline is deterministic and writes artifacts") {
  RunConfig c = small_run();
  c.train_steps = 100;
  c.policies = {"q-k-v", "qq-kk-vv"};
  const auto dir = std::filesystem::temp_directory_path() / "ngc_test_pipeline_run";
  std::filesystem::remove_all(dir);
  c.output_dir = dir;
  const PipelineReport a = run_pipeline(c);
  const std::string first = slurp(dir / "report.json");
  c.output_dir.clear();
  const PipelineReport b = run_pipeline(c);
  CHECK(a.rows == b.rows);
  CHECK(report_to_json(a) == first);
  CHECK(a.rows.size() == 2);
  for (const auto& row : a.rows) CHECK(row.params <= row.dense_params / 2);
  for (const char* f : {"report.json", "ranking.csv", "root", "root_trace", "policies/0/com", "policies/1/policy.json",
                        "policies/1/stability_report.json", "policies/0/init_report.json"})
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
  CHECK(ranking_from_csv(slurp(dir / "ranking.csv")) == a.rows);
  std::filesystem::remove_all(dir);
}

TEST_CASE("stage errors carry the stage name") {
  RunConfig c = small_run();
  c.train_steps = 5;
  c.policies = {"q-k-v@0.5", "zz-top"};
  try {
    run_pipeline(c);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("[policy]") != std::string::npos);
  }
}

TEST_CASE("verify checks") {
  VerifyOptions opts;
  CHECK(check_exact_realization(opts).passed);
  CHECK(check_init_identities(opts).passed);
  opts.truncation_fault = 1e-3;
  const CheckResult broken = check_exact_realization(opts);
  CHECK_FALSE(broken.passed);
  CHECK(broken.value > broken.limit);
  CHECK(parse_verify_level("fast") == VerifyLevel::Fast);
  CHECK(parse_verify_level("full") == VerifyLevel::Full);
  CHECK_FALSE(parse_verify_level("slow").has_value());
}
