#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nllfr {

/// Invalid user configuration (bad flag, unknown key, out-of-range hyperparameter).
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data (shapes, files, zero-variance channels).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure could not produce a usable result.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values appeared during a recursion or an iteration.
class DivergenceError : public NumericalError {
public:
  DivergenceError(const std::string& what, std::size_t index)
      : NumericalError(what + " (at index " + std::to_string(index) + ")"), index_(index) {}

  std::size_t index() const noexcept { return index_; }

private:
  std::size_t index_;
};

}  // namespace nllfr
