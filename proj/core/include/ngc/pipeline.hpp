#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ngc/dynamics.hpp"
#include "ngc/netmodel.hpp"
#include "ngc/policy.hpp"
#include "ngc/task.hpp"

namespace ngc {

enum class Selection { MinSApprox, MinS, ReportOnly };

std::optional<Selection> parse_selection(std::string_view text);
std::string_view to_string(Selection s);

struct RunConfig {
  ToyConfig model;
  TaskSpec task;
  std::vector<std::string> policies = {"q-k-v", "qq-kk-vv", "hybrid"};
  double ratio = 0.5;
  double lambda = 0.5;
  double alpha = 1.0;
  double beta = 1.0;
  std::uint64_t seed = 7;
  std::size_t train_steps = 3000;
  std::size_t capture_tokens = 256;
  std::size_t finetune_steps = 1000;
  double finetune_lr = 0.05;
  std::size_t eval_samples = 512;
  Selection selection = Selection::MinSApprox;
  MetricSpec metric;
  std::filesystem::path output_dir;  // empty: no artifacts written

  void validate() const;
};

std::string run_config_to_json(const RunConfig& cfg);

/// Stage seeds and options derived from the config's single seed.
std::uint64_t capture_seed(const RunConfig& cfg);
std::uint64_t eval_seed(const RunConfig& cfg);
TrainOptions train_options(const RunConfig& cfg);
FinetuneOptions finetune_options(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

/// `hybrid` names the first entry of the hybrid bank; a spec without an
/// `@ratio` suffix takes `ratio`.
Policy resolve_policy(const std::string& spec, const ModelShape& shape, double ratio);

struct RankingRow {
  std::string policy;
  double s = 0.0;
  double s_approx = 0.0;
  std::size_t params = 0;
  std::size_t dense_params = 0;
  double acc_before = 0.0;
  double acc_after = 0.0;
  double rho = 0.0;
  bool selected = false;

  friend bool operator==(const RankingRow&, const RankingRow&) = default;
};

struct PipelineReport {
  RunConfig config;
  double root_accuracy = 0.0;
  std::vector<RankingRow> rows;
  std::optional<std::size_t> selected;
  std::optional<double> spearman;  // (−S_approx) vs acc_after; unset when ranks are constant
  std::vector<std::string> stability_json;  // per row
};

/// Per-policy result of the factorize/init/score stage.
struct PolicyCandidate {
  Policy policy;
  RankAllocation allocation;
  ComModel com;
  StabilityReport stability;
  std::string init_report_json;
  double acc_before = 0.0;
};

/// Stage helpers, exposed so the CLI can run them one at a time.
std::vector<BlockId> replaced_blocks(const Policy& policy, const ModelShape& shape);

struct Factorized {
  RankAllocation allocation;
  ComModel com;
  std::string init_report_json;
};

/// Budgeted ranks, activation/random SVD blend per block, merged states.
Factorized factorize_policy(const RootModel& root, const ActivationTrace& root_trace, const Policy& policy,
                            const RunConfig& cfg);
/// Captures the com model on the task and scores it against the root
/// trace. Root states are the standalone truncated-SVD states at the
/// policy's ratio; com_prev states are the truncated SVD of W at the com rank.
StabilityReport score_com(const RootModel& root, const ActivationTrace& root_trace, const ComModel& com,
                          const RunConfig& cfg);
StabilityConfig stability_config(const RunConfig& cfg);
RankingRow ranking_row(const ComModel& com, const StabilityReport& stability, double acc_before);
PolicyCandidate build_candidate(const RootModel& root, const ActivationTrace& root_trace, const Policy& policy,
                                const RunConfig& cfg);
std::optional<std::size_t> select_policy(const std::vector<RankingRow>& rows, Selection selection);

/// Spearman rank correlation with average ranks for ties; unset when either
/// side has zero rank variance.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

/// train-root → capture → factorize + init → score → select → finetune →
/// eval. Stage failures are rethrown with the stage name in the message.
PipelineReport run_pipeline(const RunConfig& cfg);

std::string report_to_json(const PipelineReport& report);
std::string ranking_to_csv(const std::vector<RankingRow>& rows);
std::vector<RankingRow> ranking_from_csv(const std::string& text);

enum class ReportFormat { Json, Csv };
void export_report(const PipelineReport& report, ReportFormat format, const std::filesystem::path& path);

/// Worker count: NGC_THREADS when set (minimum 1), else the hardware
/// concurrency.
std::size_t thread_limit();
/// Runs fn(0..n-1) on up to thread_limit() threads; the first exception is
/// rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ngc
