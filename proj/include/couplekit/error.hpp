#pragma once

#include <stdexcept>
#include <string>

namespace couplekit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid inputs: shapes, parameters, configuration. CLI exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure failed (non-convergence, singular system). CLI exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace couplekit
