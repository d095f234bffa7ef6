#pragma once

#include <stdexcept>
#include <string>

namespace wdn {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  network_split,
  hydraulic_infeasible,
  schedule_infeasible,
  non_convex,
  zones_exhaust_band,
  invalid_partition,
  parse_error,
  io_error,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::network_split: return "network_split";
    case ErrorCode::hydraulic_infeasible: return "hydraulic_infeasible";
    case ErrorCode::schedule_infeasible: return "schedule_infeasible";
    case ErrorCode::non_convex: return "non_convex";
    case ErrorCode::zones_exhaust_band: return "zones_exhaust_band";
    case ErrorCode::invalid_partition: return "invalid_partition";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

// Structured failure raised by every module. The message is human readable;
// the code is what callers branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace wdn
