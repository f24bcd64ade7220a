#pragma once

#include <stdexcept>
#include <string>

namespace spsd {

enum class ErrorKind {
  Config,
  Shape,
  InvalidRoute,
  Domain,
  Schedule,
  Io,
  Validation,
  InvalidState,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; the kind maps 1:1 onto the C API
// status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace spsd
