#pragma once

#include <stdexcept>
#include <string>

namespace ditscale {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,      // bad flags or configuration documents
  kData = 2,       // missing or inconsistent run store
  kNumerical = 3,  // divergence, rejected fits, singular evaluations
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const noexcept = 0;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kUsage; }
};

// Mismatched vector lengths or out-of-range indices passed by the caller.
class DimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Argument outside the mathematical domain of a function.
class DomainError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class StoreError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kData; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kNumerical; }
};

}  // namespace ditscale
