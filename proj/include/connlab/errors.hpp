#pragma once

#include <stdexcept>
#include <string>

namespace connlab {

/// Invalid configuration, malformed input file, or an unsatisfiable sampling request.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite value showed up somewhere it must not (forward overflow, loss blowup).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree with each other or with the model.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace connlab
