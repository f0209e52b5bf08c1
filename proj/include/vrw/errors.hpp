#pragma once

#include <stdexcept>
#include <string>

namespace vrw {

// Bad argument to an operation (out-of-range index, shape mismatch, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input data violates a domain invariant (conflicting labels, bad config value, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Linear solver failed to converge or broke down.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual, int iterations)
      : std::runtime_error(what), residual_(residual), iterations_(iterations) {}

  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

// Raised by the synthetic annotation sampler when a request cannot be met.
class AnnotationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vrw
