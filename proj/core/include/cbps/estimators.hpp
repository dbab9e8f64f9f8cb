#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "cbps/design.hpp"
#include "cbps/gmm.hpp"
#include "cbps/propensity.hpp"

namespace cbps {

enum class Estimand { kAte, kAtt };

// Horvitz-Thompson estimator (1/n) sum [T Y / pi - (1-T) Y / (1-pi)].
double Iptw(const ObservedSample& sample, const Eigen::VectorXd& pi);

// Working outcome regressions K(x) = alpha1' h1(x) for E[Y(0)|X] and
// L(x) = alpha2' h2(x) for E[Y(1) - Y(0)|X].
struct OutcomeFits {
  Eigen::VectorXd alpha1;       // length m1, from controls
  Eigen::VectorXd alpha2;       // length m2, from treated residuals Y - K
  double sigma2_control = 0.0;  // residual variances by arm
  double sigma2_treated = 0.0;
};

OutcomeFits FitOutcomes(const ObservedSample& sample, const BalanceSpec& spec);
Eigen::VectorXd OutcomeK(const ObservedSample& sample, const BalanceSpec& spec,
                         const OutcomeFits& fits);
Eigen::VectorXd OutcomeL(const ObservedSample& sample, const BalanceSpec& spec,
                         const OutcomeFits& fits);

// Per-unit AIPW contributions; their mean is the AIPW estimate.
Eigen::VectorXd AipwTerms(const ObservedSample& sample, const Eigen::VectorXd& pi,
                          const OutcomeFits& fits, const BalanceSpec& spec);
double Aipw(const ObservedSample& sample, const Eigen::VectorXd& pi, const OutcomeFits& fits,
            const BalanceSpec& spec);

struct AteFit {
  FitResult fit;
  PropensityModel model;
  Eigen::VectorXd pi;  // clipped fitted probabilities used for weighting
  double estimate = 0.0;
  std::vector<std::string> warnings;
};

AteFit FitOcbpsAte(const ObservedSample& sample, const BalanceSpec& spec,
                   const FunctionList& basis, const GmmOptions& options = {});
AteFit FitCbpsAte(const ObservedSample& sample, const FunctionList& f, const FunctionList& basis,
                  const GmmOptions& options = {});
// Sieve oCBPS: basis B of size kappa with kappa == m, minimizing ||g-bar||^2.
// Warns when kappa exceeds n^(1/3).
AteFit FitOcbpsSieve(const ObservedSample& sample, const BalanceSpec& spec,
                     const FunctionList& basis, Link link = Link::kLogit,
                     GmmOptions options = {});
// IPTW with the maximum likelihood logistic fit over basis.
AteFit FitGlmAte(const ObservedSample& sample, const FunctionList& basis);

struct AttEstimate {
  double tau = 0.0;
  double tau1 = 0.0;
  double tau0 = 0.0;
};

// tau1 is the treated mean; tau0 weights controls by pi/(1-pi).
AttEstimate AttFromProbabilities(const ObservedSample& sample, const Eigen::VectorXd& pi);

struct AttFit {
  FitResult fit;
  PropensityModel model;
  Eigen::VectorXd pi;
  AttEstimate estimate;
};

AttFit FitAtt(const ObservedSample& sample, const FunctionList& f, const FunctionList& basis,
              const GmmOptions& options = {});

}  // namespace cbps
