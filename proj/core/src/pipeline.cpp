#include "ngc/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "ngc/error.hpp"
#include "ngc/init.hpp"

namespace ngc {
namespace {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc{} && ptr == s.data() + s.size(), ErrorCode::ParseError, "bad number '" + std::string(s) + "'");
  return v;
}

template <class F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), std::string("[") + name + "] " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed for " + path.string());
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

constexpr const char* kCsvHeader = "policy,S,S_approx,params,dense_params,acc_before,acc_after,rho,selected";

json row_to_json(const RankingRow& r) {
  return {{"policy", r.policy},         {"S", r.s},
          {"S_approx", r.s_approx},     {"params", r.params},
          {"dense_params", r.dense_params}, {"acc_before", r.acc_before},
          {"acc_after", r.acc_after},   {"rho", r.rho},
          {"selected", r.selected}};
}

}  // namespace

std::uint64_t capture_seed(const RunConfig& c) { return c.seed + 1; }
std::uint64_t eval_seed(const RunConfig& c) { return c.seed + 2; }

TrainOptions train_options(const RunConfig& c) {
  TrainOptions o;
  o.steps = c.train_steps;
  o.seed = c.seed;
  o.eval_samples = c.eval_samples;
  return o;
}

FinetuneOptions finetune_options(const RunConfig& c) {
  FinetuneOptions o;
  o.steps = c.finetune_steps;
  o.lr = c.finetune_lr;
  o.seed = c.seed + 3;
  return o;
}

std::optional<Selection> parse_selection(std::string_view text) {
  if (text == "min-s-approx") return Selection::MinSApprox;
  if (text == "min-s") return Selection::MinS;
  if (text == "report-only") return Selection::ReportOnly;
  return std::nullopt;
}

std::string_view to_string(Selection s) {
  switch (s) {
    case Selection::MinSApprox: return "min-s-approx";
    case Selection::MinS: return "min-s";
    case Selection::ReportOnly: return "report-only";
  }
  return "?";
}

void RunConfig::validate() const {
  model.validate();
  task.validate();
  require(task.vocab <= model.vocab && task.length <= model.context, ErrorCode::InvalidInput,
          "task does not fit the model");
  require(ratio > 0.0 && ratio <= 1.0, ErrorCode::InvalidInput, "ratio must lie in (0, 1]");
  require(lambda > 0.0 && lambda < 1.0, ErrorCode::InvalidInput, "lambda must lie in (0, 1)");
  require(!policies.empty(), ErrorCode::InvalidInput, "no policies given");
  require(capture_tokens >= 2, ErrorCode::InsufficientData, "capture needs at least 2 tokens");
  require(eval_samples >= 1, ErrorCode::InvalidInput, "eval_samples must be >= 1");
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["model"] = json::parse(config_to_json(c.model));
  j["task"] = json::parse(task_to_json(c.task));
  j["policies"] = c.policies;
  j["ratio"] = c.ratio;
  j["lambda"] = c.lambda;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["seed"] = c.seed;
  j["train_steps"] = c.train_steps;
  j["capture_tokens"] = c.capture_tokens;
  j["finetune_steps"] = c.finetune_steps;
  j["finetune_lr"] = c.finetune_lr;
  j["eval_samples"] = c.eval_samples;
  j["selection"] = std::string(to_string(c.selection));
  j["metric"] = {{"kind", std::string(to_string(c.metric.kind))},
                 {"activation", std::string(to_string(c.metric.activation))},
                 {"r_tilde_factor", c.metric.r_tilde_factor},
                 {"seed", c.metric.seed}};
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  RunConfig c;
  try {
    const auto j = json::parse(text);
    if (j.contains("model")) c.model = config_from_json(j["model"].dump());
    if (j.contains("task")) c.task = task_from_json(j["task"].dump());
    c.policies = j.value("policies", c.policies);
    c.ratio = j.value("ratio", c.ratio);
    c.lambda = j.value("lambda", c.lambda);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.seed = j.value("seed", c.seed);
    c.train_steps = j.value("train_steps", c.train_steps);
    c.capture_tokens = j.value("capture_tokens", c.capture_tokens);
    c.finetune_steps = j.value("finetune_steps", c.finetune_steps);
    c.finetune_lr = j.value("finetune_lr", c.finetune_lr);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    if (j.contains("selection")) {
      const auto s = parse_selection(j["selection"].get<std::string>());
      require(s.has_value(), ErrorCode::ParseError, "unknown selection criterion");
      c.selection = *s;
    }
    if (j.contains("metric")) {
      const auto& m = j["metric"];
      const std::string kind = m.value("kind", std::string("dot"));
      c.metric.kind = kind == "bilinear" ? MetricKind::Bilinear
                      : kind == "shared" ? MetricKind::SharedBilinear
                                         : MetricKind::DotProduct;
      c.metric.activation = m.value("activation", std::string("tanh")) == "identity" ? Activation::Identity
                                                                                     : Activation::Tanh;
      c.metric.r_tilde_factor = m.value("r_tilde_factor", 1.0);
      c.metric.seed = m.value("seed", std::uint64_t{0});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

Policy resolve_policy(const std::string& spec, const ModelShape& shape, double ratio) {
  std::string s = spec;
  const auto at = s.find('@');
  std::string suffix = at == std::string::npos ? "" : s.substr(at);
  if (at != std::string::npos) s = s.substr(0, at);
  if (s == "hybrid") {
    const auto bank = hybrid_bank_specs(shape);
    s = bank.front();
  }
  return parse_policy(s + suffix, shape, ratio);
}

std::vector<BlockId> replaced_blocks(const Policy& policy, const ModelShape& shape) {
  return policy.replaced_blocks(shape);
}

Factorized factorize_policy(const RootModel& root, const ActivationTrace& root_trace, const Policy& policy,
                            const RunConfig& cfg) {
  const ModelShape shape = root.config.shape();
  Factorized f;
  f.allocation = rank_for_budget(policy, shape, cfg.metric);
  std::map<BlockId, Matrix> targets;
  json init_report = json::object();
  for (const auto& id : policy.replaced_blocks(shape)) {
    const Matrix& w = root.weights.at(id);
    const Matrix& acts = root_trace.at({id, Side::In});
    InitConfig ic;
    ic.lambda = cfg.lambda;
    ic.rank = f.allocation.block_rank.at(id);
    ic.seed = cfg.seed * 1000003ULL + id.layer * 16 + static_cast<std::uint64_t>(id.kind);
    Matrix cmat = init_svd_blend(w, acts, ic);
    const Matrix plain = truncate(svd(w), ic.rank);
    init_report[id.name()] = {{"rank", ic.rank},
                              {"residual_act", residual_act(cmat, w, acts)},
                              {"residual_weight", residual_weight(cmat, w, acts.rows())},
                              {"truncation_residual_act", residual_act(plain, w, acts)}};
    targets[id] = std::move(cmat);
  }
  f.init_report_json = init_report.dump(2) + "\n";
  MetricSpec metric = cfg.metric;
  metric.seed = cfg.metric.seed ^ cfg.seed;
  f.com = replace_blocks(root, policy, merge_states(policy, f.allocation, targets, metric));
  return f;
}

StabilityConfig stability_config(const RunConfig& cfg) {
  StabilityConfig sc;
  sc.alpha = cfg.alpha;
  sc.beta = cfg.beta;
  return sc;
}

StabilityReport score_com(const RootModel& root, const ActivationTrace& root_trace, const ComModel& com,
                          const RunConfig& cfg) {
  const ModelShape shape = root.config.shape();
  Policy standalone;
  standalone.scope = com.policy.scope;
  standalone.ratio = com.policy.ratio;
  const RankAllocation root_alloc = rank_for_budget(standalone, shape);

  const auto blocks = com.policy.replaced_blocks(shape);
  const ActivationTrace com_trace = capture(com, cfg.task, cfg.capture_tokens, capture_seed(cfg));
  StateSnapshots snaps;
  for (const auto& id : blocks) {
    const Matrix& w = root.weights.at(id);
    const StateBlock view = com.states.view(id);
    snaps.root[id] = stacked_states(factorize_block(w, root_alloc.block_rank.at(id)));
    snaps.com_prev[id] = stacked_states(factorize_block(w, view.rank()));
    snaps.com[id] = stacked_states(view);
  }
  return score_system(root_trace, com_trace, blocks, snaps, cfg.lambda, stability_config(cfg));
}

RankingRow ranking_row(const ComModel& com, const StabilityReport& stability, double acc_before) {
  RankingRow row;
  row.policy = render_policy(com.policy);
  row.s = stability.s;
  row.s_approx = stability.s_approx;
  row.params = com.state_parameter_count();
  row.dense_params = com.replaced_dense_count();
  row.acc_before = acc_before;
  row.rho = stability.rho;
  return row;
}

PolicyCandidate build_candidate(const RootModel& root, const ActivationTrace& root_trace, const Policy& policy,
                                const RunConfig& cfg) {
  Factorized f = factorize_policy(root, root_trace, policy, cfg);
  PolicyCandidate c;
  c.policy = policy;
  c.allocation = std::move(f.allocation);
  c.com = std::move(f.com);
  c.init_report_json = std::move(f.init_report_json);
  c.stability = score_com(root, root_trace, c.com, cfg);
  c.acc_before = eval_task(c.com, cfg.task, cfg.eval_samples, eval_seed(cfg));
  return c;
}

std::optional<std::size_t> select_policy(const std::vector<RankingRow>& rows, Selection selection) {
  if (rows.empty() || selection == Selection::ReportOnly) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double a = selection == Selection::MinS ? rows[i].s : rows[i].s_approx;
    const double b = selection == Selection::MinS ? rows[best].s : rows[best].s_approx;
    if (a < b) best = i;
  }
  return best;
}

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorCode::ShapeError, "spearman: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return std::nullopt;
  return cov / std::sqrt(va * vb);
}

PipelineReport run_pipeline(const RunConfig& cfg) {
  stage("config", [&] { cfg.validate(); return 0; });
  PipelineReport report;
  report.config = cfg;
  const ModelShape shape = cfg.model.shape();
  const bool write = !cfg.output_dir.empty();

  const TrainOptions topts = train_options(cfg);
  const TrainResult trained = stage("train-root", [&] { return train_root(cfg.model, cfg.task, topts); });
  const RootModel& root = trained.model;
  report.root_accuracy = stage("eval", [&] { return eval_task(root, cfg.task, cfg.eval_samples, eval_seed(cfg)); });

  const ActivationTrace root_trace =
      stage("capture", [&] { return capture(root, cfg.task, cfg.capture_tokens, capture_seed(cfg)); });
  if (write) {
    stage("train-root", [&] { save_root(root, cfg.output_dir / "root"); return 0; });
    stage("capture", [&] { save_trace(root_trace, cfg.output_dir / "root_trace"); return 0; });
  }

  const std::vector<Policy> policies = stage("policy", [&] {
    std::vector<Policy> out;
    for (const auto& s : cfg.policies) out.push_back(resolve_policy(s, shape, cfg.ratio));
    return out;
  });

  std::vector<PolicyCandidate> candidates(policies.size());
  stage("score", [&] {
    parallel_for(policies.size(), [&](std::size_t i) { candidates[i] = build_candidate(root, root_trace, policies[i], cfg); });
    return 0;
  });

  for (const auto& c : candidates) {
    report.rows.push_back(ranking_row(c.com, c.stability, c.acc_before));
    report.stability_json.push_back(stability_report_json(c.stability, cfg.lambda, stability_config(cfg)));
  }
  report.selected = select_policy(report.rows, cfg.selection);
  if (report.selected) report.rows[*report.selected].selected = true;

  const FinetuneOptions fopts = finetune_options(cfg);
  std::vector<ComModel> tuned(candidates.size());
  stage("finetune", [&] {
    parallel_for(candidates.size(), [&](std::size_t i) {
      tuned[i] = finetune_states(candidates[i].com, cfg.task, fopts).model;
    });
    return 0;
  });
  stage("eval", [&] {
    for (std::size_t i = 0; i < tuned.size(); ++i)
      report.rows[i].acc_after = eval_task(tuned[i], cfg.task, cfg.eval_samples, eval_seed(cfg));
    return 0;
  });

  std::vector<double> neg_s, acc;
  for (const auto& r : report.rows) {
    neg_s.push_back(-r.s_approx);
    acc.push_back(r.acc_after);
  }
  report.spearman = spearman(neg_s, acc);

  if (write) {
    stage("export", [&] {
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto dir = cfg.output_dir / "policies" / std::to_string(i);
        save_com(tuned[i], dir / "com");
        write_text(dir / "policy.json", policy_to_json(candidates[i].policy));
        write_text(dir / "init_report.json", candidates[i].init_report_json);
        write_text(dir / "stability_report.json", report.stability_json[i]);
      }
      export_report(report, ReportFormat::Json, cfg.output_dir / "report.json");
      export_report(report, ReportFormat::Csv, cfg.output_dir / "ranking.csv");
      return 0;
    });
  }
  return report;
}

std::string report_to_json(const PipelineReport& report) {
  json j;
  j["schema_version"] = "1";
  j["config"] = json::parse(run_config_to_json(report.config));
  j["root_accuracy"] = report.root_accuracy;
  j["selection"] = std::string(to_string(report.config.selection));
  j["ranking"] = json::array();
  for (const auto& r : report.rows) j["ranking"].push_back(row_to_json(r));
  j["selected"] = report.selected ? json(report.rows[*report.selected].policy) : json(nullptr);
  j["spearman_neg_s_approx_vs_accuracy"] = report.spearman ? json(*report.spearman) : json(nullptr);
  j["stability"] = json::array();
  for (const auto& s : report.stability_json) j["stability"].push_back(json::parse(s));
  return j.dump(2) + "\n";
}

std::string ranking_to_csv(const std::vector<RankingRow>& rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += csv_field(r.policy) + "," + format_double(r.s) + "," + format_double(r.s_approx) + "," +
           std::to_string(r.params) + "," + std::to_string(r.dense_params) + "," + format_double(r.acc_before) +
           "," + format_double(r.acc_after) + "," + format_double(r.rho) + "," + (r.selected ? "1" : "0") + "\n";
  }
  return out;
}

std::vector<RankingRow> ranking_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == kCsvHeader, ErrorCode::ParseError,
          "ranking csv: missing header");
  std::vector<RankingRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv_split(line);
    require(f.size() == 9, ErrorCode::ParseError, "ranking csv: expected 9 fields");
    RankingRow r;
    r.policy = f[0];
    r.s = parse_double(f[1]);
    r.s_approx = parse_double(f[2]);
    r.params = static_cast<std::size_t>(std::stoull(f[3]));
    r.dense_params = static_cast<std::size_t>(std::stoull(f[4]));
    r.acc_before = parse_double(f[5]);
    r.acc_after = parse_double(f[6]);
    r.rho = parse_double(f[7]);
    r.selected = f[8] == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

void export_report(const PipelineReport& report, ReportFormat format, const std::filesystem::path& path) {
  write_text(path, format == ReportFormat::Json ? report_to_json(report) : ranking_to_csv(report.rows));
}

std::size_t thread_limit() {
  if (const char* env = std::getenv("NGC_THREADS")) {
    std::size_t n = 0;
    const std::string_view s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec == std::errc{} && ptr == s.data() + s.size()) return std::max<std::size_t>(n, 1);
  }
  return std::max<std::size_t>(std::thread::hardware_concurrency(), 1);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(n, thread_limit());
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace ngc
