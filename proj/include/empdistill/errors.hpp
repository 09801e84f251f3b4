#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace empdistill {

// Failure categories; the CLI maps each one to a distinct exit code.
enum class ErrorKind { Validation, Provider, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message)
      : Error(ErrorKind::Validation, message) {}
};

// Input that failed to parse. Row and column are 1-based; 0 means unknown.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& source, std::size_t row, std::size_t column,
             const std::string& what);

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

enum class ProviderFailure {
  Authentication,
  RateLimited,
  Transient,
  MalformedResponse,
  CacheMiss,
  Rejected,
  Unconfigured,
};

const char* to_string(ProviderFailure failure);

class ProviderError : public Error {
 public:
  ProviderError(ProviderFailure failure, const std::string& message,
                int attempts = 0)
      : Error(ErrorKind::Provider, message),
        failure_(failure),
        attempts_(attempts) {}

  ProviderFailure failure() const noexcept { return failure_; }
  int attempts() const noexcept { return attempts_; }

 private:
  ProviderFailure failure_;
  int attempts_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorKind::Io, message) {}
};

}  // namespace empdistill
