#pragma once

#include <stdexcept>
#include <string>

namespace cashlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of the operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver ran out of iterations.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual, int iterations)
      : Error(what), residual_(residual), iterations_(iterations) {}

  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Assembled quantities violate a mathematical invariant (e.g. a negative variance).
class NumericalValidityError : public Error {
 public:
  using Error::Error;
};

/// A context-driven selector was given no support tasks.
class InsufficientContextError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Network-level failure talking to an endpoint. Retryable.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// The endpoint answered with a non-success HTTP status.
class EndpointError : public Error {
 public:
  EndpointError(const std::string& what, int status) : Error(what), status_(status) {}

  int status() const noexcept { return status_; }
  bool retryable() const noexcept { return status_ == 429 || status_ >= 500; }

 private:
  int status_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cashlab
