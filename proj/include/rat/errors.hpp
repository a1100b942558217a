#pragma once

#include <stdexcept>
#include <string>

namespace rat {

/// Operand dimensions do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A factorization met a non-positive pivot. Usually the damping is too small
/// or the input is corrupted.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN or Inf where finite values are required.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace rat
