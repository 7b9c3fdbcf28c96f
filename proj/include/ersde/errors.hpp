#pragma once

#include <stdexcept>
#include <string>

namespace ersde {

/// Invalid argument or configuration value.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numeric failure inside a solver step (degenerate divided difference,
/// non-finite state, ...).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A noise scale function violates phi(x_t)/phi(x_s) <= x_t/x_s. Raised up
/// front by validation and by a step whose noise radicand goes negative.
class AdmissibilityError : public SolverError {
 public:
  using SolverError::SolverError;
};

}  // namespace ersde
