// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Criteria 1-11 run twice; the second pass must reproduce
// the first byte for byte. The pipeline runs single-threaded on the first
// pass and with at least four worker threads on the second.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "ngc/error.hpp"
#include "ngc/pipeline.hpp"
#include "ngc/verify.hpp"

using namespace ngc;

namespace {

struct Line {
  int id = 0;
  bool passed = false;
  std::string text;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Timed {
  CheckResult result;
  double seconds = 0.0;
};

Timed timed(const std::function<CheckResult(const VerifyOptions&)>& check, const VerifyOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = check(opts);
  return {std::move(r), seconds_since(t0)};
}

std::string describe(const Timed& t) {
  return fmt("%s value=%.3g limit=%.3g trials=%zu time=%.2fs", t.result.id.c_str(), t.result.value,
             t.result.limit, t.result.trials, t.seconds) +
         (t.result.detail.empty() ? "" : " (" + t.result.detail + ")");
}

struct Pass {
  std::vector<Line> lines;
  std::string bytes;  // serialized reports of criteria 1-11
};

Pass run_criteria(const char* threads) {
  Pass out;
  VerifyOptions opts;
  opts.level = VerifyLevel::Fast;
  opts.seed = 0;
  VerifyReport verify;
  verify.level = opts.level;

  auto single = [&](int id, auto check, double max_seconds) {
    const Timed t = timed(check, opts);
    verify.checks.push_back(t.result);
    const bool ok = t.result.passed && (max_seconds <= 0.0 || t.seconds < max_seconds);
    std::string text = describe(t);
    if (max_seconds > 0.0) text += fmt(" budget=%.0fs", max_seconds);
    out.lines.push_back({id, ok, text});
  };

  single(1, check_exact_realization, 5.0);
  single(2, check_eckart_young, 5.0);
  single(3, check_iss, 10.0);
  {
    const Timed gap = timed(check_loss_gap, opts), pot = timed(check_external_potential, opts);
    verify.checks.push_back(gap.result);
    verify.checks.push_back(pot.result);
    out.lines.push_back({4, gap.result.passed && pot.result.passed, describe(gap) + "; " + describe(pot)});
  }
  single(5, check_delay_compilation, 0.0);
  single(6, check_sharing, 0.0);
  single(7, check_metric_reparameterization, 0.0);
  single(8, check_gradients, 0.0);
  single(9, check_init_identities, 0.0);
  single(10, check_projection_recovery, 0.0);
  out.bytes = verify_report_json(verify);

  setenv("NGC_THREADS", threads, 1);
  RunConfig cfg;  // 2 layers, d_model 32, copy task, q-k-v / qq-kk-vv / hybrid at ratio 0.5
  const auto t0 = std::chrono::steady_clock::now();
  std::string text;
  bool ok = false;
  try {
    const PipelineReport rep = run_pipeline(cfg);
    const double secs = seconds_since(t0);
    bool params_ok = rep.rows.size() == 3;
    for (const auto& row : rep.rows) params_ok = params_ok && 2 * row.params <= row.dense_params;
    const bool has_selection = rep.selected.has_value();
    const RankingRow* sel = has_selection ? &rep.rows[*rep.selected] : nullptr;
    ok = rep.root_accuracy >= 0.95 && sel && sel->acc_after >= 0.85 && params_ok && secs < 600.0;
    text = fmt("pipeline root_acc=%.4f", rep.root_accuracy);
    if (sel) {
      text += " selected=" + sel->policy +
              fmt(" acc_before=%.4f acc_after=%.4f params=%zu/%zu", sel->acc_before, sel->acc_after, sel->params,
                  sel->dense_params);
    } else {
      text += " selected=none";
    }
    text += params_ok ? " param_audit=ok" : " param_audit=FAILED";
    text += rep.spearman ? fmt(" spearman(-S_approx,acc_after)=%.4f", *rep.spearman)
                         : std::string(" spearman(-S_approx,acc_after)=undefined(constant ranks)");
    text += fmt(" threads=%s time=%.1fs budget=600s", threads, secs);
    out.bytes += report_to_json(rep);
  } catch (const Error& e) {
    text = std::string("pipeline error: ") + e.what();
  }
  out.lines.push_back({11, ok, text});
  return out;
}

}  // namespace

int main() {
  const std::string many = std::to_string(std::max(4u, std::thread::hardware_concurrency()));
  const Pass first = run_criteria("1");
  const Pass second = run_criteria(many.c_str());

  bool all = true;
  for (const Line& l : first.lines) {
    std::printf("%s criterion %d: %s\n", l.passed ? "PASS" : "FAIL", l.id, l.text.c_str());
    all = all && l.passed;
  }
  const bool same = first.bytes == second.bytes;
  std::printf("%s criterion 12: reports of criteria 1-11 %s across two runs (%zu bytes, threads 1 vs %s)\n",
              same ? "PASS" : "FAIL", same ? "byte-identical" : "DIFFER", first.bytes.size(), many.c_str());
  all = all && same;
  return all ? 0 : 1;
}
