#include "core/errors.hpp"

namespace spsd {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::InvalidRoute: return "invalid_route";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Schedule: return "schedule";
    case ErrorKind::Io: return "io";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::InvalidState: return "invalid_state";
  }
  return "unknown";
}

}  // namespace spsd
