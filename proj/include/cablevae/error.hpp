#pragma once

#include <stdexcept>
#include <string>

namespace cablevae {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or unparsable config/model file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (CSV cells, labels, schema).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape disagreement inside a compute graph.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values produced during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace cablevae
