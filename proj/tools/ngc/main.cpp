// ngc: command-line front end for the NGC pipeline stages.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ngc/error.hpp"
#include "ngc/netmodel.hpp"
#include "ngc/pipeline.hpp"
#include "ngc/policy.hpp"
#include "ngc/verify.hpp"

namespace fs = std::filesystem;
using namespace ngc;

namespace {

struct Overrides {
  std::string config_file;
  std::optional<double> ratio, lambda, alpha, beta, finetune_lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> train_steps, finetune_steps, capture_tokens, eval_samples;
  std::vector<std::string> policies;
  std::string selection;
  std::string out;
};

void add_run_options(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_file, "run configuration JSON")->check(CLI::ExistingFile);
  app->add_option("--ratio", o.ratio, "parameter budget ratio in (0, 1]");
  app->add_option("--lambda", o.lambda, "activation / random blend weight");
  app->add_option("--alpha", o.alpha, "weight of the com residual term in S_approx");
  app->add_option("--beta", o.beta, "weight of the state residual term in S_approx");
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("--policy", o.policies, "policy spec (repeatable)");
  app->add_option("--selection", o.selection, "min-s-approx | min-s | report-only");
  app->add_option("--train-steps", o.train_steps);
  app->add_option("--finetune-steps", o.finetune_steps);
  app->add_option("--finetune-lr", o.finetune_lr);
  app->add_option("--capture-tokens", o.capture_tokens);
  app->add_option("--eval-samples", o.eval_samples);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + p.string());
  out << text;
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config_file.empty() ? RunConfig{} : run_config_from_json(read_file(o.config_file));
  if (o.ratio) c.ratio = *o.ratio;
  if (o.lambda) c.lambda = *o.lambda;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.beta) c.beta = *o.beta;
  if (o.seed) c.seed = *o.seed;
  if (o.train_steps) c.train_steps = *o.train_steps;
  if (o.finetune_steps) c.finetune_steps = *o.finetune_steps;
  if (o.finetune_lr) c.finetune_lr = *o.finetune_lr;
  if (o.capture_tokens) c.capture_tokens = *o.capture_tokens;
  if (o.eval_samples) c.eval_samples = *o.eval_samples;
  if (!o.policies.empty()) c.policies = o.policies;
  if (!o.selection.empty()) {
    const auto s = parse_selection(o.selection);
    require(s.has_value(), ErrorCode::InvalidInput, "unknown selection '" + o.selection + "'");
    c.selection = *s;
  }
  c.output_dir = o.out;
  c.validate();
  return c;
}

void require_out(const Overrides& o) {
  require(!o.out.empty(), ErrorCode::InvalidInput, "--out is required for this command");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neuronal group communication: factorize, wire, score and verify toy transformer blocks"};
  app.require_subcommand(1);
  Overrides o;
  std::string root_dir, trace_dir, com_dir, ranking_file, family = "none", level = "fast";
  std::vector<std::string> com_dirs;
  double fault = 0.0;

  auto* train = app.add_subcommand("train-root", "train the dense toy model");
  add_run_options(train, o);
  train->add_option("--out", o.out, "checkpoint directory")->required();

  auto* cap = app.add_subcommand("capture", "record block activations on task sequences");
  add_run_options(cap, o);
  cap->add_option("--root", root_dir, "root checkpoint")->required();
  cap->add_option("--com", com_dir, "com checkpoint (captures the com model instead)");
  cap->add_option("--out", o.out, "trace directory")->required();

  auto* fact = app.add_subcommand("factorize", "initialize neuronal states for one policy");
  add_run_options(fact, o);
  fact->add_option("--root", root_dir)->required();
  fact->add_option("--trace", trace_dir, "root trace")->required();
  fact->add_option("--out", o.out, "com checkpoint directory")->required();

  auto* pol = app.add_subcommand("policies", "policy utilities");
  pol->require_subcommand(1);
  auto* enumerate = pol->add_subcommand("enumerate", "list the policies of a family");
  add_run_options(enumerate, o);
  enumerate->add_option("--family", family, "none | adjacent_same_kind | adjacent_cross_kind | hybrid_bank");

  auto* score = app.add_subcommand("score", "stability scores of com checkpoints");
  add_run_options(score, o);
  score->add_option("--root", root_dir)->required();
  score->add_option("--trace", trace_dir)->required();
  score->add_option("--com", com_dirs, "com checkpoint (repeatable)")->required();
  score->add_option("--out", o.out, "output directory for ranking.csv and stability reports")->required();

  auto* select = app.add_subcommand("select", "pick a policy from a ranking table");
  add_run_options(select, o);
  select->add_option("--ranking", ranking_file)->required()->check(CLI::ExistingFile);
  select->add_option("--out", o.out, "rewritten ranking with the selection marked");

  auto* tune = app.add_subcommand("finetune", "train the states of a com checkpoint");
  add_run_options(tune, o);
  tune->add_option("--com", com_dir)->required();
  tune->add_option("--out", o.out)->required();

  auto* ev = app.add_subcommand("eval", "task accuracy of a checkpoint");
  add_run_options(ev, o);
  ev->add_option("--root", root_dir);
  ev->add_option("--com", com_dir);

  auto* run = app.add_subcommand("run", "full pipeline");
  add_run_options(run, o);
  run->add_option("--out", o.out, "artifact directory");

  auto* ver = app.add_subcommand("verify", "numerical checks of every theorem and proposition");
  ver->add_option("--level", level, "fast | full");
  ver->add_option("--seed", o.seed);
  ver->add_option("--inject-fault", fault, "perturb the truncated factors by this amount");
  ver->add_option("--out", o.out, "write the JSON report here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const RunConfig cfg = resolve(o);
      const TrainResult r = train_root(cfg.model, cfg.task, train_options(cfg));
      save_root(r.model, cfg.output_dir);
      write_file(cfg.output_dir / "run_config.json", run_config_to_json(cfg));
      std::printf("accuracy %.6f\n", r.accuracy);
    } else if (cap->parsed()) {
      const RunConfig cfg = resolve(o);
      const ActivationTrace trace =
          com_dir.empty() ? capture(load_root(root_dir), cfg.task, cfg.capture_tokens, capture_seed(cfg))
                          : capture(load_com(com_dir), cfg.task, cfg.capture_tokens, capture_seed(cfg));
      save_trace(trace, cfg.output_dir);
      std::printf("captured %zu steps\n", trace.steps());
    } else if (fact->parsed()) {
      const RunConfig cfg = resolve(o);
      require(o.policies.size() == 1, ErrorCode::InvalidInput, "factorize takes exactly one --policy");
      const RootModel root = load_root(root_dir);
      const Policy policy = resolve_policy(o.policies.front(), root.config.shape(), cfg.ratio);
      const Factorized f = factorize_policy(root, load_trace(trace_dir), policy, cfg);
      save_com(f.com, cfg.output_dir);
      write_file(cfg.output_dir / "init_report.json", f.init_report_json);
      std::printf("%s params %zu / %zu\n", render_policy(policy).c_str(), f.allocation.ngc_parameters,
                  f.allocation.dense_parameters);
    } else if (enumerate->parsed()) {
      const RunConfig cfg = resolve(o);
      const auto fam = parse_policy_family(family);
      require(fam.has_value(), ErrorCode::InvalidInput, "unknown family '" + family + "'");
      for (const Policy& p : enumerate_policies(cfg.model.shape(), *fam, cfg.ratio))
        std::printf("%s\n", render_policy(p).c_str());
    } else if (score->parsed()) {
      const RunConfig cfg = resolve(o);
      const RootModel root = load_root(root_dir);
      const ActivationTrace trace = load_trace(trace_dir);
      std::vector<RankingRow> rows;
      for (std::size_t i = 0; i < com_dirs.size(); ++i) {
        const ComModel com = load_com(com_dirs[i]);
        const StabilityReport st = score_com(root, trace, com, cfg);
        rows.push_back(ranking_row(com, st, eval_task(com, cfg.task, cfg.eval_samples, eval_seed(cfg))));
        write_file(cfg.output_dir / ("stability_report_" + std::to_string(i) + ".json"),
                   stability_report_json(st, cfg.lambda, stability_config(cfg)));
      }
      const std::string csv = ranking_to_csv(rows);
      write_file(cfg.output_dir / "ranking.csv", csv);
      std::fputs(csv.c_str(), stdout);
    } else if (select->parsed()) {
      const RunConfig cfg = resolve(o);
      auto rows = ranking_from_csv(read_file(ranking_file));
      const auto pick = select_policy(rows, cfg.selection);
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i].selected = pick && *pick == i;
      if (!o.out.empty()) write_file(o.out, ranking_to_csv(rows));
      std::printf("%s\n", pick ? rows[*pick].policy.c_str() : "(none)");
    } else if (tune->parsed()) {
      const RunConfig cfg = resolve(o);
      const ComModel com = load_com(com_dir);
      const double before = eval_task(com, cfg.task, cfg.eval_samples, eval_seed(cfg));
      const FinetuneResult r = finetune_states(com, cfg.task, finetune_options(cfg));
      save_com(r.model, cfg.output_dir);
      std::printf("accuracy %.6f -> %.6f\n", before, eval_task(r.model, cfg.task, cfg.eval_samples, eval_seed(cfg)));
    } else if (ev->parsed()) {
      const RunConfig cfg = resolve(o);
      require(root_dir.empty() != com_dir.empty(), ErrorCode::InvalidInput, "give exactly one of --root, --com");
      const double acc = com_dir.empty() ? eval_task(load_root(root_dir), cfg.task, cfg.eval_samples, eval_seed(cfg))
                                         : eval_task(load_com(com_dir), cfg.task, cfg.eval_samples, eval_seed(cfg));
      std::printf("accuracy %.6f\n", acc);
    } else if (run->parsed()) {
      const RunConfig cfg = resolve(o);
      const PipelineReport r = run_pipeline(cfg);
      std::fputs(ranking_to_csv(r.rows).c_str(), stdout);
      std::printf("root accuracy %.6f\n", r.root_accuracy);
      std::printf("selected %s\n", r.selected ? r.rows[*r.selected].policy.c_str() : "(none)");
      if (r.spearman)
        std::printf("spearman %.6f\n", *r.spearman);
      else
        std::printf("spearman undefined (constant ranks)\n");
    } else if (ver->parsed()) {
      VerifyOptions vo;
      const auto lv = parse_verify_level(level);
      require(lv.has_value(), ErrorCode::InvalidInput, "unknown level '" + level + "'");
      vo.level = *lv;
      vo.seed = o.seed.value_or(0);
      vo.truncation_fault = fault;
      const VerifyReport r = verify_suite(vo);
      for (const auto& c : r.checks)
        std::printf("%-26s %s  %.3g (limit %.3g)  %s\n", c.id.c_str(), c.passed ? "ok  " : "FAIL", c.value, c.limit,
                    c.detail.c_str());
      if (!o.out.empty()) write_file(o.out, verify_report_json(r));
      return r.passed() ? 0 : 1;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
