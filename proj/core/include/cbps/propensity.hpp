#pragma once

#include <span>

#include <Eigen/Core>

#include "cbps/design.hpp"

namespace cbps {

// Monotone link J mapping a linear index to a probability.
enum class Link { kLogit, kProbit };

double LinkValue(Link link, double eta);
double LinkDerivative(Link link, double eta);
double LinkSecondDerivative(Link link, double eta);

// pi(x) = J(beta' b(x)) over a list of covariate functions b.
//
// A parametric logistic model uses Link::kLogit over a fixed covariate map.
// A sieve model is the same object with the basis playing the role of the
// growing approximation space (kappa = basis().size()).
class PropensityModel {
 public:
  PropensityModel(FunctionList basis, Eigen::VectorXd coefficients,
                  Link link = Link::kLogit);

  const FunctionList& basis() const { return basis_; }
  const Eigen::VectorXd& coefficients() const { return coefficients_; }
  Link link() const { return link_; }
  int dim() const { return static_cast<int>(basis_.size()); }

  PropensityModel WithCoefficients(Eigen::VectorXd coefficients) const;

 private:
  FunctionList basis_;
  Eigen::VectorXd coefficients_;
  Link link_;
};

// Always strictly inside (0, 1).
double Pi(const PropensityModel& model, std::span<const double> x);
// d pi / d beta = J'(beta' b(x)) b(x).
Eigen::VectorXd PiGradient(const PropensityModel& model, std::span<const double> x);

// Fitted probabilities for every unit of a sample.
Eigen::VectorXd Probabilities(const PropensityModel& model, const ObservedSample& sample);
// Row i holds d pi_i / d beta.
Eigen::MatrixXd ProbabilityGradients(const PropensityModel& model,
                                     const ObservedSample& sample);

struct MleOptions {
  double tol = 1e-8;  // max-norm of the summed score
  int max_iter = 100;
};

// Bernoulli maximum likelihood for the logistic model over covariate_map,
// by Newton iterations with step halving. Throws NonConvergenceError on
// separation, rank deficiency or iteration exhaustion.
PropensityModel FitMle(const ObservedSample& sample, const FunctionList& covariate_map,
                       const MleOptions& options = {});

}  // namespace cbps
