#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mldcn {

enum class ErrorCode {
  shape,
  config,
  lookup,
  parse,
  schema,
  metric,
  contract,
  training,
  corruption,
  unsupported,
  io,
  gradcheck,  // finite-difference check above tolerance
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::shape: return "E_SHAPE";
    case ErrorCode::config: return "E_CONFIG";
    case ErrorCode::lookup: return "E_LOOKUP";
    case ErrorCode::parse: return "E_PARSE";
    case ErrorCode::schema: return "E_SCHEMA";
    case ErrorCode::metric: return "E_METRIC";
    case ErrorCode::contract: return "E_CONTRACT";
    case ErrorCode::training: return "E_TRAINING";
    case ErrorCode::corruption: return "E_CORRUPT";
    case ErrorCode::unsupported: return "E_UNSUPPORTED";
    case ErrorCode::io: return "E_IO";
    case ErrorCode::gradcheck: return "E_GRADCHECK";
  }
  return "E_UNKNOWN";
}

// Every failure raised by the library carries one of the codes above; the CLI
// prints them as "<CODE>: <message>" on a single line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace mldcn
