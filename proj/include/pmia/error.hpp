#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pmia {

enum class ErrorKind {
  Parse,
  Validation,
  Config,
  Numeric,
  Transport,
  Io,
  Undefined,  // metric undefined for the given input (e.g. single-class AUC)
};

std::string_view to_string(ErrorKind kind);

/// Base exception for every failure raised by the toolkit. The kind maps
/// onto the machine-readable error JSON emitted by the CLI.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, long line = -1)
      : Error(ErrorKind::Parse, line >= 0 ? "line " + std::to_string(line) + ": " + message : message),
        line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message) : Error(ErrorKind::Validation, message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(ErrorKind::Config, message) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error(ErrorKind::Numeric, message) {}
};

class TransportError : public Error {
 public:
  explicit TransportError(const std::string& message) : Error(ErrorKind::Transport, message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorKind::Io, message) {}
};

class UndefinedMetricError : public Error {
 public:
  explicit UndefinedMetricError(const std::string& message) : Error(ErrorKind::Undefined, message) {}
};

}  // namespace pmia
