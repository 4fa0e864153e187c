#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gaussurp {

/// Machine-readable failure categories. The CLI prints these verbatim as
/// `error[<name>]` so scripts can match on them.
enum class ErrorCode {
  missing_file,
  bad_magic,
  unsupported_version,
  size_mismatch,
  truncated,
  parse_error,
  io_error,
  dimension_mismatch,
  non_finite,
  empty_input,
  out_of_range,
  factorization_failed,
  rank_deficient,
  zero_variance,
  missing_score,
  no_usable_pairs,
  config_conflict,
  invalid_argument,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::size_mismatch: return "size_mismatch";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::factorization_failed: return "factorization_failed";
    case ErrorCode::rank_deficient: return "rank_deficient";
    case ErrorCode::zero_variance: return "zero_variance";
    case ErrorCode::missing_score: return "missing_score";
    case ErrorCode::no_usable_pairs: return "no_usable_pairs";
    case ErrorCode::config_conflict: return "config_conflict";
    case ErrorCode::invalid_argument: return "invalid_argument";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace gaussurp
