#include "ngc/error.hpp"

namespace ngc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::RankError: return "RankError";
    case ErrorCode::NotTrainable: return "NotTrainable";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::InvalidToken: return "InvalidToken";
    case ErrorCode::PolicyMismatch: return "PolicyMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownBlock: return "UnknownBlock";
    case ErrorCode::BudgetTooSmall: return "BudgetTooSmall";
    case ErrorCode::InvalidMerge: return "InvalidMerge";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::DegenerateDynamics: return "DegenerateDynamics";
    case ErrorCode::NotContractive: return "NotContractive";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace ngc
