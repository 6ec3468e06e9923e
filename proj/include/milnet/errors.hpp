#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace milnet {

// Shape or contract violations inside the library (programming errors).
class ShapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad configuration: unknown keys, out-of-range hyperparameters, invalid
// variant/axis combinations.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data. `line` is 0 when not tied to a file line.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Non-finite values reached the optimizer.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace milnet
