#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mica {

// Dimension mismatch between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Base for failures caused by the data rather than by the caller.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateSeriesError : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientSamplesError : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

class IngestionError : public DataError {
 public:
  IngestionError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class NonFiniteLossError : public DataError {
 public:
  NonFiniteLossError(std::size_t step, const std::string& what)
      : DataError("non-finite loss at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace mica
