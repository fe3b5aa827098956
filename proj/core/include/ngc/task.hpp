#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ngc/rng.hpp"

namespace ngc {

enum class TaskKind { Copy, ModAdd };

/// Synthetic sequence task. JSON form:
///   {"kind": "copy", "length": 16, "vocab": 16, "shift": 1}
///   {"kind": "modadd", "length": 2, "vocab": 16, "modulus": 13}
struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  std::size_t length = 16;
  std::size_t vocab = 16;
  std::size_t shift = 1;
  std::size_t modulus = 0;

  void validate() const;
  /// Number of positions that carry a label.
  std::size_t scored_positions() const;
};

std::string task_to_json(const TaskSpec& task);
TaskSpec task_from_json(const std::string& text);

inline constexpr int kUnscored = -1;

struct Sample {
  std::vector<int> tokens;
  std::vector<int> targets;  // kUnscored where no label applies
};

/// copy: uniform tokens, target[t] = tokens[t − shift] for t ≥ shift.
/// modadd: tokens (a, b) below the modulus, target[1] = (a + b) mod m.
Sample sample_task(const TaskSpec& task, Rng& rng);

}  // namespace ngc
