#pragma once

#include <stdexcept>
#include <string>

namespace tof {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input tensor has the wrong rank or extent. `input()` names the argument.
class ShapeError : public Error {
 public:
  ShapeError(std::string input, const std::string& detail)
      : Error("shape mismatch in '" + input + "': " + detail), input_(std::move(input)) {}
  const std::string& input() const noexcept { return input_; }

 private:
  std::string input_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Data violates a domain invariant (non-finite values, no usable imagery, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite activation or gradient. `where()` names the layer.
class NumericError : public Error {
 public:
  NumericError(std::string where, const std::string& detail)
      : Error("non-finite values in '" + where + "': " + detail), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tof
