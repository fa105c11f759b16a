#pragma once

#include <stdexcept>
#include <string>

namespace w2bary {

// Bad shapes, bad configuration, out-of-domain arguments.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, failed conditioning, solvers that did not converge.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPsdError : public NumericalError {
 public:
  NotPsdError(const std::string& what, double eigenvalue)
      : NumericalError(what), eigenvalue_(eigenvalue) {}
  double eigenvalue() const { return eigenvalue_; }

 private:
  double eigenvalue_;
};

class ConditioningError : public NumericalError {
 public:
  ConditioningError(const std::string& what, double eigenvalue)
      : NumericalError(what), eigenvalue_(eigenvalue) {}
  double eigenvalue() const { return eigenvalue_; }

 private:
  double eigenvalue_;
};

// An iterative method ran out of iterations; carries the last residual.
class IterationError : public NumericalError {
 public:
  IterationError(const std::string& what, double residual)
      : NumericalError(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace w2bary
