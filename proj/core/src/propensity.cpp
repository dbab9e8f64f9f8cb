#include "cbps/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Cholesky>

#include "cbps/errors.hpp"

namespace cbps {

namespace {

constexpr double kMinProb = std::numeric_limits<double>::min();
const double kMaxProb = std::nextafter(1.0, 0.0);

double Expit(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double NormalPdf(double t) {
  return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
}

// log(1 + exp(eta)) without overflow.
double Softplus(double eta) {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

}  // namespace

double LinkValue(Link link, double eta) {
  double p = link == Link::kLogit ? Expit(eta) : 0.5 * std::erfc(-eta / std::numbers::sqrt2);
  return std::clamp(p, kMinProb, kMaxProb);
}

double LinkDerivative(Link link, double eta) {
  if (link == Link::kLogit) {
    const double p = Expit(eta);
    return p * (1.0 - p);
  }
  return NormalPdf(eta);
}

double LinkSecondDerivative(Link link, double eta) {
  if (link == Link::kLogit) {
    const double p = Expit(eta);
    return p * (1.0 - p) * (1.0 - 2.0 * p);
  }
  return -eta * NormalPdf(eta);
}

PropensityModel::PropensityModel(FunctionList basis, Eigen::VectorXd coefficients, Link link)
    : basis_(std::move(basis)), coefficients_(std::move(coefficients)), link_(link) {
  if (basis_.empty()) throw ValidationError("propensity basis must be non-empty");
  if (coefficients_.size() != static_cast<Eigen::Index>(basis_.size())) {
    throw DimensionError("coefficient length " + std::to_string(coefficients_.size()) +
                         " does not match basis size " + std::to_string(basis_.size()));
  }
  if (!coefficients_.allFinite()) throw ValidationError("coefficients must be finite");
}

PropensityModel PropensityModel::WithCoefficients(Eigen::VectorXd coefficients) const {
  return PropensityModel(basis_, std::move(coefficients), link_);
}

double Pi(const PropensityModel& model, std::span<const double> x) {
  const double eta = EvaluateFunctions(model.basis(), x).dot(model.coefficients());
  return LinkValue(model.link(), eta);
}

Eigen::VectorXd PiGradient(const PropensityModel& model, std::span<const double> x) {
  const Eigen::VectorXd b = EvaluateFunctions(model.basis(), x);
  return LinkDerivative(model.link(), b.dot(model.coefficients())) * b;
}

Eigen::VectorXd Probabilities(const PropensityModel& model, const ObservedSample& sample) {
  const Eigen::VectorXd eta = DesignMatrix(model.basis(), sample) * model.coefficients();
  return eta.unaryExpr([&](double e) { return LinkValue(model.link(), e); });
}

Eigen::MatrixXd ProbabilityGradients(const PropensityModel& model,
                                     const ObservedSample& sample) {
  const Eigen::MatrixXd b = DesignMatrix(model.basis(), sample);
  const Eigen::VectorXd eta = b * model.coefficients();
  const Eigen::VectorXd scale =
      eta.unaryExpr([&](double e) { return LinkDerivative(model.link(), e); });
  return scale.asDiagonal() * b;
}

PropensityModel FitMle(const ObservedSample& sample, const FunctionList& covariate_map,
                       const MleOptions& options) {
  const Eigen::MatrixXd x = DesignMatrix(covariate_map, sample);
  const Eigen::VectorXd& t = sample.treatment();
  const int n = sample.n();
  const Eigen::Index q = x.cols();
  if (q == 0) throw ValidationError("covariate map must be non-empty");

  auto log_likelihood = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = x * beta;
    double ll = 0.0;
    for (int i = 0; i < n; ++i) ll += t[i] * eta[i] - Softplus(eta[i]);
    return ll;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  double ll = log_likelihood(beta);
  double score_norm = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter <= options.max_iter; ++iter) {
    const Eigen::VectorXd eta = x * beta;
    const Eigen::VectorXd p = eta.unaryExpr(&Expit);
    const Eigen::VectorXd score = x.transpose() * (t - p);
    score_norm = score.lpNorm<Eigen::Infinity>();

    if (score_norm <= options.tol) {
      // Perfect prediction of every unit means the MLE does not exist.
      if ((t - p).lpNorm<Eigen::Infinity>() < 1e-6) break;
      return PropensityModel(covariate_map, beta, Link::kLogit);
    }
    if (iter == options.max_iter) break;

    const Eigen::VectorXd w = p.array() * (1.0 - p.array());
    const Eigen::MatrixXd info = x.transpose() * w.asDiagonal() * x;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-14 * ldlt.vectorD().maxCoeff()) {
      break;
    }
    const Eigen::VectorXd step = ldlt.solve(score);

    // Near the optimum the gain drops below the rounding error of the sum.
    const double slack = 64.0 * std::numeric_limits<double>::epsilon() * (n + std::abs(ll));
    double scale = 1.0;
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      const Eigen::VectorXd trial = beta + scale * step;
      const double trial_ll = log_likelihood(trial);
      if (std::isfinite(trial_ll) && trial_ll >= ll - slack) {
        beta = trial;
        ll = trial_ll;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) {
      // No ascent is possible: accept if the score is at the roundoff floor.
      if (score_norm <= 1e-10 * n * std::max(1.0, x.cwiseAbs().maxCoeff())) {
        return PropensityModel(covariate_map, beta, Link::kLogit);
      }
      break;
    }
    if (beta.lpNorm<Eigen::Infinity>() > 1e3) break;
  }
  throw NonConvergenceError(
      "logistic maximum likelihood did not converge (separation or rank deficiency); "
      "final score max-norm " + std::to_string(score_norm),
      beta, score_norm);
}

}  // namespace cbps
