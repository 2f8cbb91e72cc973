#pragma once

#include <stdexcept>
#include <string>

namespace readalign {

enum class ErrorKind {
  MissingFile,
  ParseError,
  InvariantViolation,
  InvalidArgument,
  IOError,
  MapMismatch,
  MissingSentence,
  HeadCountMismatch,
  RunMismatch,
  SingularSystem,
  DegenerateTarget,
  EmptyTestFold,
  TooFewSubjects,
  ZeroCeiling,
  OutOfDomain,
  OutOfRange,
  TooFewPairs,
  MissingJudge,
  EmptyMap,
  ZeroVariance,
};

const char* to_string(ErrorKind kind) noexcept;

// Numerical failures exit with 3 from the CLI; everything else is an input
// or configuration problem (exit 2).
bool is_numerical(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace readalign
