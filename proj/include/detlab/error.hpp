#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace detlab {

enum class ErrorCode {
  EmptyPredictions,
  MissingMatch,
  LengthMismatch,
  ShapeMismatch,
  OddChannels,
  ZeroMatrix,
  MissingWeight,
  ParseError,
  ConfigError,
  InvariantViolation,
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception. `code()` identifies the failure class so callers
/// (and the CLI exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace detlab
