#pragma once

#include <stdexcept>
#include <string>

namespace satt {

// Tensor shapes or vector lengths that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid module / model / training configuration (divisibility, ranges).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated files and documents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN / inf where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse such as running backward on an empty tape.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace satt
