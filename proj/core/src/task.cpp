#include "ngc/task.hpp"

#include "json.hpp"
#include "ngc/error.hpp"

namespace ngc {

void TaskSpec::validate() const {
  require(vocab >= 2, ErrorCode::InvalidInput, "task vocab must be at least 2");
  if (kind == TaskKind::Copy) {
    require(length >= 2, ErrorCode::InvalidInput, "copy length must be at least 2");
    require(shift >= 1 && shift < length, ErrorCode::InvalidInput, "copy shift must lie in [1, length)");
  } else {
    require(length == 2, ErrorCode::InvalidInput, "modadd sequences have length 2");
    require(modulus >= 2 && modulus <= vocab, ErrorCode::InvalidInput, "modulus must lie in [2, vocab]");
  }
}

std::size_t TaskSpec::scored_positions() const { return kind == TaskKind::Copy ? length - shift : 1; }

std::string task_to_json(const TaskSpec& task) {
  nlohmann::json j;
  j["kind"] = task.kind == TaskKind::Copy ? "copy" : "modadd";
  j["length"] = task.length;
  j["vocab"] = task.vocab;
  if (task.kind == TaskKind::Copy)
    j["shift"] = task.shift;
  else
    j["modulus"] = task.modulus;
  return j.dump();
}

TaskSpec task_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TaskSpec t;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "copy") {
      t.kind = TaskKind::Copy;
      t.length = j.value("length", t.length);
      t.shift = j.value("shift", t.shift);
    } else if (kind == "modadd") {
      t.kind = TaskKind::ModAdd;
      t.length = j.value("length", std::size_t{2});
      t.modulus = j.at("modulus").get<std::size_t>();
    } else {
      fail(ErrorCode::ParseError, "unknown task kind '" + kind + "'");
    }
    t.vocab = j.value("vocab", t.vocab);
    t.validate();
    return t;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("task json: ") + e.what());
  }
}

Sample sample_task(const TaskSpec& task, Rng& rng) {
  task.validate();
  Sample s;
  s.tokens.resize(task.length);
  s.targets.assign(task.length, kUnscored);
  if (task.kind == TaskKind::Copy) {
    std::uniform_int_distribution<int> dist(0, static_cast<int>(task.vocab) - 1);
    for (auto& t : s.tokens) t = dist(rng);
    for (std::size_t t = task.shift; t < task.length; ++t) s.targets[t] = s.tokens[t - task.shift];
  } else {
    std::uniform_int_distribution<int> dist(0, static_cast<int>(task.modulus) - 1);
    s.tokens[0] = dist(rng);
    s.tokens[1] = dist(rng);
    s.targets[1] = (s.tokens[0] + s.tokens[1]) % static_cast<int>(task.modulus);
  }
  return s;
}

}  // namespace ngc
