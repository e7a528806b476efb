#include "pmia/error.hpp"

namespace pmia {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Config: return "config";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::Io: return "io";
    case ErrorKind::Undefined: return "undefined";
  }
  return "unknown";
}

}  // namespace pmia
