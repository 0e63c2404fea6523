#include "baq/error.hpp"

namespace baq {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::DuplicateQuestion: return "duplicate-question";
    case ErrorCode::PosteriorCollapse: return "posterior-collapse";
    case ErrorCode::BudgetExceedsFeasible: return "budget-exceeds-feasible";
    case ErrorCode::ParseError: return "parse-error";
    case ErrorCode::IoError: return "io-error";
    case ErrorCode::FormatError: return "format-error";
    case ErrorCode::MissingArtifact: return "missing-artifact";
    case ErrorCode::ElicitationAborted: return "elicitation-aborted";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace baq
