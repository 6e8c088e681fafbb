#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace frailty {

enum class ErrorCode {
  invalid_input,
  no_events,
  zero_risk_set,
  non_finite,
  singular_jacobian,
  io_error,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid_input";
    case ErrorCode::no_events: return "no_events";
    case ErrorCode::zero_risk_set: return "zero_risk_set";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::singular_jacobian: return "singular_jacobian";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

// All library failures surface as this type; `code()` is what the CLI prints.
class FrailtyError : public std::runtime_error {
 public:
  FrailtyError(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace frailty
