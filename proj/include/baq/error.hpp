#pragma once

#include <stdexcept>
#include <string>

namespace baq {

enum class ErrorCode {
  InvalidArgument,
  DuplicateQuestion,
  PosteriorCollapse,
  BudgetExceedsFeasible,
  ParseError,
  IoError,
  FormatError,
  MissingArtifact,
  ElicitationAborted,
};

const char* to_string(ErrorCode code);

/// Every failure surfaced by the library carries one of the codes above so
/// callers (the CLI in particular) can map it to a one-line diagnostic.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(ErrorCode::InvalidArgument, what);
}

}  // namespace baq
