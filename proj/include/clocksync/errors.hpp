#pragma once

#include <stdexcept>
#include <string>

namespace clocksync {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (non-positive skew, overlapping rounds, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A linear system that must be invertible was singular.
class SingularObservation : public Error {
 public:
  using Error::Error;
};

/// An estimate was requested from a belief that carries no usable information.
class NonInformative : public Error {
 public:
  using Error::Error;
};

/// Topology or configuration is structurally invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace clocksync
