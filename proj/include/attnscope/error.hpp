#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attnscope {

enum class ErrorCode {
  Io,
  MalformedFile,
  ShapeMismatch,
  NonFiniteWeight,
  UnsupportedArchitecture,
  InvalidConfig,
  MalformedRecord,
  UnknownTokenId,
  LengthExceeded,
  ReconstructionFailure,
  EmptyInput,
  InsufficientData,
  IndexOutOfRange,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace attnscope
