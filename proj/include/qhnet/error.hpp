#pragma once

#include <stdexcept>
#include <string>

namespace qhnet {

// Every error the library raises derives from Error. The category decides the
// CLI exit code: configuration and data problems map to 2, numerical failures
// map to 3, contract violations are programming errors.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Raised when two atoms sit on top of each other.
class DegenerateGeometry : public DataError {
 public:
  using DataError::DataError;
};

class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

}  // namespace qhnet
