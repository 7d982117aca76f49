#pragma once

#include <stdexcept>
#include <string>

namespace bifdr {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or incompatible input data (CSV, missing fields, sign violations).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite arithmetic. `term()` names the quantity that went bad.
class NumericalError : public Error {
 public:
  NumericalError(std::string term, const std::string& what)
      : Error(what), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

/// The penalized solver did not reach its KKT tolerance.
class SolverError : public Error {
 public:
  SolverError(int fold, const std::string& what) : Error(what), fold_(fold) {}
  /// Fold on which the failing fit ran, or -1 when not fold-specific.
  int fold() const noexcept { return fold_; }

 private:
  int fold_;
};

}  // namespace bifdr
