#pragma once

#include <stdexcept>
#include <string>

namespace scalevec {

enum class ErrorCode {
  ZeroVector,
  ZeroMagnitude,
  DimensionMismatch,
  NonFinite,
  NonReparam,
  MatchingViolation,
  SupportViolation,
  UnbalancedTeacher,
  InsufficientPoints,
  Diverged,
  NonPSDNoise,
  ConfigError,
  IoError,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::ZeroMagnitude: return "ZeroMagnitude";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NonReparam: return "NonReparam";
    case ErrorCode::MatchingViolation: return "MatchingViolation";
    case ErrorCode::SupportViolation: return "SupportViolation";
    case ErrorCode::UnbalancedTeacher: return "UnbalancedTeacher";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::NonPSDNoise: return "NonPSDNoise";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace scalevec
