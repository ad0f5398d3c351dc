#pragma once

#include <stdexcept>
#include <string>

namespace circuitlab {

/// Process exit codes shared by every subcommand.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Bad settings, inconsistent dimensions, layer ordering violations.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

/// Malformed or out-of-range input data (token ids, files, empty selections).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

/// Non-finite values, divergence, zero-norm vectors where a direction is required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::kNumeric, what) {}
};

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

class TrainingDivergenceError : public NumericError {
 public:
  TrainingDivergenceError(std::size_t step, const std::string& what)
      : NumericError(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace circuitlab
