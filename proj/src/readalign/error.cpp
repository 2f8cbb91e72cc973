#include "readalign/error.hpp"

namespace readalign {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IOError: return "IOError";
    case ErrorKind::MapMismatch: return "MapMismatch";
    case ErrorKind::MissingSentence: return "MissingSentence";
    case ErrorKind::HeadCountMismatch: return "HeadCountMismatch";
    case ErrorKind::RunMismatch: return "RunMismatch";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::DegenerateTarget: return "DegenerateTarget";
    case ErrorKind::EmptyTestFold: return "EmptyTestFold";
    case ErrorKind::TooFewSubjects: return "TooFewSubjects";
    case ErrorKind::ZeroCeiling: return "ZeroCeiling";
    case ErrorKind::OutOfDomain: return "OutOfDomain";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::TooFewPairs: return "TooFewPairs";
    case ErrorKind::MissingJudge: return "MissingJudge";
    case ErrorKind::EmptyMap: return "EmptyMap";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
  }
  return "Unknown";
}

bool is_numerical(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::SingularSystem:
    case ErrorKind::DegenerateTarget:
    case ErrorKind::ZeroCeiling:
    case ErrorKind::OutOfDomain:
    case ErrorKind::ZeroVariance:
      return true;
    default:
      return false;
  }
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace readalign
