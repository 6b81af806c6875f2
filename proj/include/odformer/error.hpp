#pragma once

#include <stdexcept>
#include <string>

namespace odf {

/// Operand extents do not conform, or an axis/index is out of range.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration value is outside its valid domain.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unreadable file (netpbm, manifest, checkpoint).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value encountered (guard mode, or training divergence).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace odf
