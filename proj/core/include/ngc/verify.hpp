#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ngc {

enum class VerifyLevel { Fast, Full };

std::optional<VerifyLevel> parse_verify_level(std::string_view text);

struct VerifyOptions {
  VerifyLevel level = VerifyLevel::Fast;
  std::uint64_t seed = 0;
  /// Added to every entry of the truncated factors used by the exact
  /// realization check; a nonzero value must make that check fail.
  double truncation_fault = 0.0;
};

/// One numbered check. `value` is the worst measured quantity and `limit`
/// the threshold it is compared against (value ≤ limit passes, except for
/// counts, which must be zero).
struct CheckResult {
  std::string id;
  std::string name;
  bool passed = false;
  double value = 0.0;
  double limit = 0.0;
  std::size_t trials = 0;
  std::string detail;
};

struct VerifyReport {
  VerifyLevel level = VerifyLevel::Fast;
  std::vector<CheckResult> checks;

  bool passed() const;
  const CheckResult* find(std::string_view id) const;
};

CheckResult check_exact_realization(const VerifyOptions& opts);
CheckResult check_eckart_young(const VerifyOptions& opts);
CheckResult check_iss(const VerifyOptions& opts);
CheckResult check_loss_gap(const VerifyOptions& opts);
CheckResult check_external_potential(const VerifyOptions& opts);
CheckResult check_delay_compilation(const VerifyOptions& opts);
CheckResult check_sharing(const VerifyOptions& opts);
CheckResult check_metric_reparameterization(const VerifyOptions& opts);
CheckResult check_universality(const VerifyOptions& opts);
CheckResult check_gradients(const VerifyOptions& opts);
CheckResult check_init_identities(const VerifyOptions& opts);
CheckResult check_projection_recovery(const VerifyOptions& opts);
CheckResult check_policy_budget(const VerifyOptions& opts);

/// Runs every check above in order. Self-contained: no files are read.
VerifyReport verify_suite(const VerifyOptions& opts);

/// Deterministic JSON rendering (no timings).
std::string verify_report_json(const VerifyReport& report);

}  // namespace ngc
