#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "cbps/design.hpp"
#include "cbps/estimators.hpp"
#include "cbps/gmm.hpp"
#include "cbps/propensity.hpp"

namespace cbps {

// Asymptotic variance of sqrt(n)(estimate - truth). Negative plug-ins are
// floored at zero and flagged.
struct VarianceEstimate {
  double value = 0.0;
  bool floored = false;
};

// (1/n) sum [T Y^2 / pi^2 + (1-T) Y^2 / (1-pi)^2] - mu^2.
VarianceEstimate VarTrue(const ObservedSample& sample, const Eigen::VectorXd& pi);

// VarTrue minus H_y' I^{-1} H_y at the maximum likelihood fit.
VarianceEstimate VarGlm(const ObservedSample& sample, const PropensityModel& mle,
                        const OutcomeFits& fits, const BalanceSpec& spec);

// Sandwich form for CBPS with balance functions f; `system` must be the
// kCbps system the fit was computed on.
VarianceEstimate VarCbps(const MomentSystem& system, const Eigen::VectorXd& beta_hat,
                         const OutcomeFits& fits, const BalanceSpec& spec);

enum class OcbpsVarianceForm {
  kGeneral,  // Sigma_mu - v' G (G' Omega^{-1} G)^{-1} G' v
  kSquare,   // Sigma_mu - v' Omega v, valid when m == q
};

// v = (alpha1; alpha2) and Omega is ridged as in the solver.
VarianceEstimate VarOcbps(const MomentSystem& system, const Eigen::VectorXd& beta_hat,
                          const OutcomeFits& fits,
                          OcbpsVarianceForm form = OcbpsVarianceForm::kGeneral);

// (1/n) sum [sigma1^2/pi + sigma0^2/(1-pi) + (L - mu)^2] with homoskedastic
// arm residual variances.
VarianceEstimate VarVoptPlugin(const ObservedSample& sample, const Eigen::VectorXd& pi,
                               const OutcomeFits& fits, const BalanceSpec& spec);

// p^{-2} (1/n) sum [pi sigma1^2 + pi^2/(1-pi) sigma0^2 + pi (L - tau)^2].
VarianceEstimate VarAtt(const ObservedSample& sample, const Eigen::VectorXd& pi,
                        const OutcomeFits& fits, const BalanceSpec& spec, double tau);

// Empirical variance of the AIPW contributions.
VarianceEstimate VarAipw(const ObservedSample& sample, const Eigen::VectorXd& pi,
                         const OutcomeFits& fits, const BalanceSpec& spec);

double NormalQuantile(double p);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// point -/+ z * sqrt(variance / n), z the two-sided standard normal quantile.
Interval ConfidenceInterval(double point, double variance, int n, double level = 0.95);

struct EstimateReport {
  Estimand estimand = Estimand::kAte;
  std::string method;
  int n = 0;
  double point = 0.0;
  double variance = 0.0;
  double std_error = 0.0;
  double level = 0.95;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double tau1 = 0.0;  // ATT only
  double tau0 = 0.0;  // ATT only
  std::vector<double> moment_residuals;
  double residual_max = 0.0;
  int iterations = 0;
  int clip_events = 0;
  bool converged = true;
  bool variance_floored = false;
  std::vector<std::string> warnings;

  bool operator==(const EstimateReport&) const = default;
};

// Fills variance, std_error and the interval from a point estimate.
void SetInterval(EstimateReport* report, const VarianceEstimate& variance);

}  // namespace cbps
