#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace cbps {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input (function specs, CSV cells, config values).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Input violating a documented precondition (treatment not binary, too few units, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Covariate index or vector length incompatible with the data dimension.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A numerical evaluation produced NaN or infinity.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

// A design or Jacobian matrix is (numerically) rank deficient.
class SingularDesignError : public Error {
 public:
  using Error::Error;
};

// An estimator cannot be formed from the data, e.g. all ATT control weights are zero.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// An iterative solver stopped without meeting its convergence criterion.
// Carries the best iterate found and the size of its residual.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, Eigen::VectorXd best_iterate,
                      double residual_norm)
      : Error(what),
        best_iterate_(std::move(best_iterate)),
        residual_norm_(residual_norm) {}

  const Eigen::VectorXd& best_iterate() const { return best_iterate_; }
  double residual_norm() const { return residual_norm_; }

 private:
  Eigen::VectorXd best_iterate_;
  double residual_norm_;
};

}  // namespace cbps
