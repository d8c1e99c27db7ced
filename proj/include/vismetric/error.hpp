#pragma once

#include <stdexcept>
#include <string>

namespace vismetric {

// Exception families map one-to-one onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Bad input data, bad arguments, or a missing pipeline stage.
class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Malformed dataset line; carries the 1-based line number.
class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Anything that went wrong talking to an embedding/imagination provider.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, bool retryable = false)
      : Error(what), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }
  int exit_code() const noexcept override { return 3; }

 private:
  bool retryable_;
};

/// Text exceeds the provider's token window and truncation was not requested.
class LengthError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

/// Corrupted cache entry (bad magic, version, size or checksum).
class IntegrityError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// Numerical failure, e.g. a correlation over a constant series.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace vismetric
