#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ngc {

enum class ErrorCode {
  InvalidInput,
  ShapeError,
  RankError,
  NotTrainable,
  NotPositiveDefinite,
  TrainingDiverged,
  InvalidToken,
  PolicyMismatch,
  ParseError,
  UnknownBlock,
  BudgetTooSmall,
  InvalidMerge,
  StepTooLarge,
  InsufficientData,
  DegenerateDynamics,
  NotContractive,
  IoError,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so
// callers (and tests) can branch on the category rather than the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace ngc
