#pragma once

#include <stdexcept>
#include <string>

namespace cmr {

/// Malformed input: bad files, inconsistent shapes, invalid arguments.
/// The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// On-disk format violations (magic, version, truncation, size mismatch).
class FormatError : public InputError {
 public:
  using InputError::InputError;
};

/// Numerical failure at run time (non-finite values, undefined quantities).
/// The CLI maps this to exit code 1.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cmr
