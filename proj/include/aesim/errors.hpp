#pragma once

#include <stdexcept>
#include <string>

namespace aesim {

// Base for every error raised by the toolkit. The CLI maps subclasses onto
// exit codes (see ExitCode in cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A softmax row or pooling window with no unmasked entry.
class InvalidMaskError : public Error {
 public:
  using Error::Error;
};

// Violated caller contract (non-scalar loss, empty input, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Corpus content that cannot be turned into training pairs.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Carries the 1-based line number when known.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, long line = 0)
      : DataError(line > 0 ? "line " + std::to_string(line) + ": " + what
                           : what),
        line_(line) {}

  long line() const { return line_; }

 private:
  long line_;
};

// Non-finite values produced by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Divergence or bad gradients during optimization.
class TrainingError : public NumericError {
 public:
  using NumericError::NumericError;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace aesim
