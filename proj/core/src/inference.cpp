#include "cbps/inference.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <boost/math/distributions/normal.hpp>

#include "cbps/errors.hpp"

namespace cbps {

namespace {

VarianceEstimate Floor(double value) {
  if (!std::isfinite(value)) throw EvaluationError("non-finite variance estimate");
  if (value < 0.0) return {0.0, true};
  return {value, false};
}

Eigen::VectorXd Clip(const Eigen::VectorXd& pi) {
  return pi.cwiseMax(kPiClip).cwiseMin(1.0 - kPiClip);
}

// Per-unit IPTW contributions T Y / pi - (1-T) Y / (1-pi).
Eigen::ArrayXd IptwTerms(const ObservedSample& sample, const Eigen::VectorXd& pi) {
  const Eigen::ArrayXd t = sample.treatment().array();
  const Eigen::ArrayXd y = sample.outcome().array();
  return t * y / pi.array() - (1.0 - t) * y / (1.0 - pi.array());
}

double SigmaMu0(const ObservedSample& sample, const Eigen::VectorXd& pi) {
  const Eigen::ArrayXd terms = IptwTerms(sample, pi);
  const double mu = terms.mean();
  return terms.square().mean() - mu * mu;
}

// H_y = -(1/n) sum (K + (1-pi) L) / (pi (1-pi)) * d pi / d beta.
Eigen::VectorXd Hy(const Eigen::VectorXd& pi, const Eigen::MatrixXd& dpi, const Eigen::VectorXd& k,
                   const Eigen::VectorXd& l) {
  const Eigen::ArrayXd p = pi.array();
  const Eigen::VectorXd c = ((k.array() + (1.0 - p) * l.array()) / (p * (1.0 - p))).matrix();
  return -(dpi.transpose() * c) / static_cast<double>(pi.size());
}

Eigen::MatrixXd SpdInverse(const Eigen::MatrixXd& a, const char* what) {
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * ldlt.vectorD().cwiseAbs().maxCoeff()) {
    throw SingularDesignError(std::string(what) + " is singular");
  }
  return ldlt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
}

}  // namespace

VarianceEstimate VarTrue(const ObservedSample& sample, const Eigen::VectorXd& pi) {
  if (pi.size() != sample.n()) throw DimensionError("probability vector length mismatch");
  return Floor(SigmaMu0(sample, pi));
}

VarianceEstimate VarGlm(const ObservedSample& sample, const PropensityModel& mle,
                        const OutcomeFits& fits, const BalanceSpec& spec) {
  const Eigen::VectorXd pi = Clip(Probabilities(mle, sample));
  const Eigen::MatrixXd dpi = ProbabilityGradients(mle, sample);
  const Eigen::VectorXd hy = Hy(pi, dpi, OutcomeK(sample, spec, fits), OutcomeL(sample, spec, fits));
  // Fisher information (1/n) sum pi'^2 / (pi (1-pi)) b b'; pi (1-pi) b b' for logit.
  const Eigen::VectorXd w = (pi.array() * (1.0 - pi.array())).inverse().matrix();
  const Eigen::MatrixXd info = dpi.transpose() * w.asDiagonal() * dpi / sample.n();
  const Eigen::MatrixXd info_inv = SpdInverse(info, "Fisher information");
  return Floor(SigmaMu0(sample, pi) - hy.dot(info_inv * hy));
}

VarianceEstimate VarCbps(const MomentSystem& system, const Eigen::VectorXd& beta_hat,
                         const OutcomeFits& fits, const BalanceSpec& spec) {
  if (system.kind() != MomentKind::kCbps) throw ValidationError("VarCbps needs a CBPS system");
  const ObservedSample& sample = system.sample();
  const double n = sample.n();
  const PropensityModel model(system.basis(), beta_hat, system.link());
  const Eigen::VectorXd pi = system.Probabilities(beta_hat);
  const Eigen::MatrixXd dpi = ProbabilityGradients(model, sample);
  const Eigen::VectorXd hy = Hy(pi, dpi, OutcomeK(sample, spec, fits), OutcomeL(sample, spec, fits));

  const Eigen::MatrixXd& f = system.balance_matrix();
  const Eigen::VectorXd inv_var = (pi.array() * (1.0 - pi.array())).inverse().matrix();
  const Eigen::MatrixXd hf = -(f.transpose() * inv_var.asDiagonal() * dpi) / n;

  const Eigen::MatrixXd g = system.UnitMoments(beta_hat);
  const Eigen::MatrixXd omega_inv = SpdInverse(RidgedOmega(system.Omega(beta_hat)), "Omega");
  const Eigen::VectorXd mu_terms = IptwTerms(sample, pi).matrix();
  const double mu = mu_terms.mean();
  const Eigen::VectorXd gbar = g.colwise().mean().transpose();
  const Eigen::VectorXd cov = g.transpose() * mu_terms / n - mu * gbar;

  const Eigen::MatrixXd a_inv = SpdInverse(hf.transpose() * omega_inv * hf, "H_f' Omega^{-1} H_f");
  const Eigen::VectorXd a_hy = a_inv * hy;
  const double value =
      SigmaMu0(sample, pi) + hy.dot(a_hy) - 2.0 * a_hy.dot(hf.transpose() * (omega_inv * cov));
  return Floor(value);
}

VarianceEstimate VarOcbps(const MomentSystem& system, const Eigen::VectorXd& beta_hat,
                          const OutcomeFits& fits, OcbpsVarianceForm form) {
  if (system.kind() != MomentKind::kOcbps) throw ValidationError("VarOcbps needs an oCBPS system");
  const int m = system.num_moments();
  const int m1 = system.m1();
  if (fits.alpha1.size() != m1 || fits.alpha2.size() != m - m1) {
    throw DimensionError("outcome coefficients do not match the balance blocks");
  }
  Eigen::VectorXd v(m);
  v << fits.alpha1, fits.alpha2;
  const Eigen::VectorXd pi = system.Probabilities(beta_hat);
  const double sigma_mu = SigmaMu0(system.sample(), pi);
  const Eigen::MatrixXd omega = RidgedOmega(system.Omega(beta_hat));

  if (form == OcbpsVarianceForm::kSquare) {
    if (m != system.num_params()) {
      throw DimensionError("the square variance form needs m == q");
    }
    return Floor(sigma_mu - v.dot(omega * v));
  }
  const Eigen::MatrixXd g = system.Jacobian(beta_hat);
  const Eigen::MatrixXd omega_inv = SpdInverse(omega, "Omega");
  const Eigen::MatrixXd inner = SpdInverse(g.transpose() * omega_inv * g, "G' Omega^{-1} G");
  const Eigen::VectorXd gv = g.transpose() * v;
  return Floor(sigma_mu - gv.dot(inner * gv));
}

VarianceEstimate VarVoptPlugin(const ObservedSample& sample, const Eigen::VectorXd& pi,
                               const OutcomeFits& fits, const BalanceSpec& spec) {
  const double mu = Iptw(sample, pi);
  const Eigen::ArrayXd l = OutcomeL(sample, spec, fits).array();
  const Eigen::ArrayXd p = pi.array();
  const double value =
      (fits.sigma2_treated / p + fits.sigma2_control / (1.0 - p) + (l - mu).square()).mean();
  return Floor(value);
}

VarianceEstimate VarAtt(const ObservedSample& sample, const Eigen::VectorXd& pi,
                        const OutcomeFits& fits, const BalanceSpec& spec, double tau) {
  if (pi.size() != sample.n()) throw DimensionError("probability vector length mismatch");
  const double p_hat = static_cast<double>(sample.num_treated()) / sample.n();
  if (!(p_hat > 0.0)) throw DegenerateError("no treated units");
  const Eigen::ArrayXd l = OutcomeL(sample, spec, fits).array();
  const Eigen::ArrayXd p = pi.array();
  const double inner = (p * fits.sigma2_treated + p.square() / (1.0 - p) * fits.sigma2_control +
                        p * (l - tau).square())
                           .mean();
  return Floor(inner / (p_hat * p_hat));
}

VarianceEstimate VarAipw(const ObservedSample& sample, const Eigen::VectorXd& pi,
                         const OutcomeFits& fits, const BalanceSpec& spec) {
  const Eigen::ArrayXd terms = AipwTerms(sample, pi, fits, spec).array();
  return Floor((terms - terms.mean()).square().mean());
}

double NormalQuantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("quantile level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

Interval ConfidenceInterval(double point, double variance, int n, double level) {
  if (!(variance >= 0.0)) throw ValidationError("variance must be non-negative");
  if (n < 1) throw ValidationError("n must be >= 1");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("level must lie in (0, 1)");
  const double half = NormalQuantile(0.5 + 0.5 * level) * std::sqrt(variance / n);
  return {point - half, point + half};
}

void SetInterval(EstimateReport* report, const VarianceEstimate& variance) {
  report->variance = variance.value;
  report->variance_floored = variance.floored;
  report->std_error = std::sqrt(variance.value / report->n);
  const Interval ci = ConfidenceInterval(report->point, variance.value, report->n, report->level);
  report->ci_low = ci.low;
  report->ci_high = ci.high;
  if (variance.floored) report->warnings.emplace_back("negative variance plug-in floored at 0");
}

}  // namespace cbps
