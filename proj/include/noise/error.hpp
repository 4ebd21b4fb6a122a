#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace noise {

enum class ErrorCode {
  UnsupportedIsa,
  InsufficientRegisterPool,
  AnchorOutsideLoop,
  DuplicateRegionId,
  RegisterPressureTooHigh,
  MalformedAssembly,
  AuditMismatch,
  TooFewPoints,
  ZeroLoopSize,
  ZeroReference,
  InvalidProbability,
  InvalidArgument,
  PlanError,
  BuildFailure,
  RunFailure,
  AnchorMissing,
  CacheCorrupt,
  IoFailure,
  ChecksumMismatch,
};

std::string_view to_string(ErrorCode code);

// Every recoverable failure in the toolchain is reported through this type;
// callers switch on code() rather than on the message text.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

}  // namespace noise
