#pragma once

#include <stdexcept>
#include <string>

namespace hetmem {

// Shape or dtype disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value, unknown key, or malformed config text.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unreadable, empty, or corrupt files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hetmem
