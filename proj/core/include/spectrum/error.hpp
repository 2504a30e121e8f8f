#pragma once

#include <stdexcept>
#include <string>

namespace spectrum {

/// Base exception for every failure surfaced by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an internal numerical consistency check fails, for example a
/// spectrum that should be conjugate-symmetric producing imaginary output.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace spectrum
