#include "detlab/error.hpp"

namespace detlab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyPredictions: return "EmptyPredictions";
    case ErrorCode::MissingMatch: return "MissingMatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OddChannels: return "OddChannels";
    case ErrorCode::ZeroMatrix: return "ZeroMatrix";
    case ErrorCode::MissingWeight: return "MissingWeight";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

}  // namespace detlab
