#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kite {

enum class ErrorKind {
  kInvalidArgument,
  kNearZenith,
  kZeroVelocity,
  kNoClosedPath,
  kWindowViolation,
  kBufferLengthMismatch,
  kSeriesTooShort,
  kNoFeasibleGain,
  kNoFeasibleRate,
  kDimensionMismatch,
  kWindowTooShort,
  kDegenerateData,
  kSolverFailure,
  kRunAborted,
  kSchemaError,
};

std::string_view to_string(ErrorKind kind);

/// Library-wide exception. The kind is stable and is what callers branch on;
/// the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kNearZenith: return "NearZenith";
    case ErrorKind::kZeroVelocity: return "ZeroVelocity";
    case ErrorKind::kNoClosedPath: return "NoClosedPath";
    case ErrorKind::kWindowViolation: return "WindowViolation";
    case ErrorKind::kBufferLengthMismatch: return "BufferLengthMismatch";
    case ErrorKind::kSeriesTooShort: return "SeriesTooShort";
    case ErrorKind::kNoFeasibleGain: return "NoFeasibleGain";
    case ErrorKind::kNoFeasibleRate: return "NoFeasibleRate";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kWindowTooShort: return "WindowTooShort";
    case ErrorKind::kDegenerateData: return "DegenerateData";
    case ErrorKind::kSolverFailure: return "SolverFailure";
    case ErrorKind::kRunAborted: return "RunAborted";
    case ErrorKind::kSchemaError: return "SchemaError";
  }
  return "Unknown";
}

}  // namespace kite
