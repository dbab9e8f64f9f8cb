#include "cbps/estimators.hpp"

#include <cmath>
#include <cstdio>

#include <Eigen/QR>

#include "cbps/errors.hpp"

namespace cbps {

namespace {

void CheckProbabilities(const ObservedSample& sample, const Eigen::VectorXd& pi) {
  if (pi.size() != sample.n()) {
    throw DimensionError("probability vector has length " + std::to_string(pi.size()) +
                         ", expected " + std::to_string(sample.n()));
  }
  for (Eigen::Index i = 0; i < pi.size(); ++i) {
    if (!(pi[i] > 0.0 && pi[i] < 1.0)) {
      throw ValidationError("probabilities must lie strictly inside (0, 1)");
    }
  }
}

// Rows of `x` and `y` where the treatment equals `arm`.
void SelectArm(const ObservedSample& sample, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
               double arm, Eigen::MatrixXd* x_arm, Eigen::VectorXd* y_arm) {
  const int count = arm == 1.0 ? sample.num_treated() : sample.num_control();
  x_arm->resize(count, x.cols());
  y_arm->resize(count);
  int k = 0;
  for (int i = 0; i < sample.n(); ++i) {
    if (sample.treatment()[i] != arm) continue;
    x_arm->row(k) = x.row(i);
    (*y_arm)[k] = y[i];
    ++k;
  }
}

Eigen::VectorXd LeastSquares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const char* what, double* sigma2) {
  if (x.cols() == 0) {
    *sigma2 = y.squaredNorm() / static_cast<double>(y.size());
    return Eigen::VectorXd(0);
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < x.cols()) {
    throw SingularDesignError(std::string(what) + " design is rank deficient (rank " +
                              std::to_string(qr.rank()) + " < " + std::to_string(x.cols()) +
                              ")");
  }
  Eigen::VectorXd coef = qr.solve(y);
  const double rss = (y - x * coef).squaredNorm();
  const Eigen::Index dof = x.rows() - x.cols();
  *sigma2 = dof > 0 ? rss / static_cast<double>(dof) : 0.0;
  return coef;
}

AteFit Finish(const MomentSystem& system, FitResult fit) {
  const ObservedSample& sample = system.sample();
  Eigen::VectorXd pi = system.Probabilities(fit.beta_hat);
  PropensityModel model(system.basis(), fit.beta_hat, system.link());
  const double estimate = Iptw(sample, pi);
  return AteFit{std::move(fit), std::move(model), std::move(pi), estimate, {}};
}

}  // namespace

double Iptw(const ObservedSample& sample, const Eigen::VectorXd& pi) {
  CheckProbabilities(sample, pi);
  const auto t = sample.treatment().array();
  const auto y = sample.outcome().array();
  const double value = (t * y / pi.array() - (1.0 - t) * y / (1.0 - pi.array())).mean();
  if (!std::isfinite(value)) throw EvaluationError("non-finite IPTW estimate");
  return value;
}

OutcomeFits FitOutcomes(const ObservedSample& sample, const BalanceSpec& spec) {
  OutcomeFits fits;
  const Eigen::MatrixXd h1 = DesignMatrix(spec.h1(), sample);
  Eigen::MatrixXd x0;
  Eigen::VectorXd y0;
  SelectArm(sample, h1, sample.outcome(), 0.0, &x0, &y0);
  fits.alpha1 = LeastSquares(x0, y0, "control outcome", &fits.sigma2_control);

  const Eigen::VectorXd residual = sample.outcome() - h1 * fits.alpha1;
  if (spec.m2() == 0) {
    fits.alpha2.resize(0);
    double ss = 0.0;
    for (int i = 0; i < sample.n(); ++i) {
      if (sample.treated(i)) ss += residual[i] * residual[i];
    }
    fits.sigma2_treated = sample.num_treated() > 1 ? ss / (sample.num_treated() - 1) : 0.0;
    return fits;
  }
  const Eigen::MatrixXd h2 = DesignMatrix(spec.h2(), sample);
  Eigen::MatrixXd x1;
  Eigen::VectorXd r1;
  SelectArm(sample, h2, residual, 1.0, &x1, &r1);
  fits.alpha2 = LeastSquares(x1, r1, "treated outcome", &fits.sigma2_treated);
  return fits;
}

Eigen::VectorXd OutcomeK(const ObservedSample& sample, const BalanceSpec& spec,
                         const OutcomeFits& fits) {
  if (fits.alpha1.size() != spec.m1()) throw DimensionError("alpha1 length does not match h1");
  return DesignMatrix(spec.h1(), sample) * fits.alpha1;
}

Eigen::VectorXd OutcomeL(const ObservedSample& sample, const BalanceSpec& spec,
                         const OutcomeFits& fits) {
  if (fits.alpha2.size() != spec.m2()) throw DimensionError("alpha2 length does not match h2");
  if (spec.m2() == 0) return Eigen::VectorXd::Zero(sample.n());
  return DesignMatrix(spec.h2(), sample) * fits.alpha2;
}

Eigen::VectorXd AipwTerms(const ObservedSample& sample, const Eigen::VectorXd& pi,
                          const OutcomeFits& fits, const BalanceSpec& spec) {
  CheckProbabilities(sample, pi);
  const Eigen::ArrayXd k = OutcomeK(sample, spec, fits).array();
  const Eigen::ArrayXd l = OutcomeL(sample, spec, fits).array();
  const Eigen::ArrayXd t = sample.treatment().array();
  const Eigen::ArrayXd y = sample.outcome().array();
  const Eigen::ArrayXd p = pi.array();
  Eigen::VectorXd terms =
      (t * y / p - (1.0 - t) * y / (1.0 - p) - (t - p) * ((k + l) / p + k / (1.0 - p))).matrix();
  if (!terms.allFinite()) throw EvaluationError("non-finite AIPW contribution");
  return terms;
}

double Aipw(const ObservedSample& sample, const Eigen::VectorXd& pi, const OutcomeFits& fits,
            const BalanceSpec& spec) {
  return AipwTerms(sample, pi, fits, spec).mean();
}

AteFit FitOcbpsAte(const ObservedSample& sample, const BalanceSpec& spec,
                   const FunctionList& basis, const GmmOptions& options) {
  const MomentSystem system = MomentSystem::Ocbps(sample, spec, basis);
  return Finish(system, Solve(system, options));
}

AteFit FitCbpsAte(const ObservedSample& sample, const FunctionList& f, const FunctionList& basis,
                  const GmmOptions& options) {
  const MomentSystem system = MomentSystem::Cbps(sample, f, basis);
  return Finish(system, Solve(system, options));
}

AteFit FitOcbpsSieve(const ObservedSample& sample, const BalanceSpec& spec,
                     const FunctionList& basis, Link link, GmmOptions options) {
  if (static_cast<int>(basis.size()) != spec.m()) {
    throw ValidationError("sieve basis size kappa = " + std::to_string(basis.size()) +
                          " must equal the number of balance functions m = " +
                          std::to_string(spec.m()));
  }
  options.weighting = GmmOptions::Weighting::kIdentity;
  const MomentSystem system = MomentSystem::Ocbps(sample, spec, basis, link);
  AteFit out = Finish(system, Solve(system, options));
  const double bound = std::cbrt(static_cast<double>(sample.n()));
  if (static_cast<double>(basis.size()) > bound) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "sieve dimension kappa = %zu exceeds n^(1/3) = %.3g",
                  basis.size(), bound);
    out.warnings.emplace_back(buf);
  }
  return out;
}

AteFit FitGlmAte(const ObservedSample& sample, const FunctionList& basis) {
  PropensityModel model = FitMle(sample, basis);
  const MomentSystem system = MomentSystem::Score(sample, basis);
  FitResult fit;
  fit.beta_hat = model.coefficients();
  fit.residual = system.Moments(fit.beta_hat, &fit.clip_events);
  fit.weight_used = Eigen::MatrixXd::Identity(system.num_moments(), system.num_moments());
  fit.objective = fit.residual.squaredNorm();
  fit.converged = true;
  Eigen::VectorXd pi = system.Probabilities(fit.beta_hat);
  const double estimate = Iptw(sample, pi);
  return AteFit{std::move(fit), std::move(model), std::move(pi), estimate, {}};
}

AttEstimate AttFromProbabilities(const ObservedSample& sample, const Eigen::VectorXd& pi) {
  CheckProbabilities(sample, pi);
  double sum1 = 0.0;
  double sum0 = 0.0;
  double weight0 = 0.0;
  for (int i = 0; i < sample.n(); ++i) {
    const double y = sample.outcome()[i];
    if (sample.treated(i)) {
      sum1 += y;
    } else {
      const double r = pi[i] / (1.0 - pi[i]);
      sum0 += r * y;
      weight0 += r;
    }
  }
  if (!(weight0 > 0.0)) throw DegenerateError("all control weights are zero");
  AttEstimate est;
  est.tau1 = sum1 / sample.num_treated();
  est.tau0 = sum0 / weight0;
  est.tau = est.tau1 - est.tau0;
  if (!std::isfinite(est.tau)) throw EvaluationError("non-finite ATT estimate");
  return est;
}

AttFit FitAtt(const ObservedSample& sample, const FunctionList& f, const FunctionList& basis,
              const GmmOptions& options) {
  const MomentSystem system = MomentSystem::Att(sample, f, basis);
  FitResult fit = Solve(system, options);
  Eigen::VectorXd pi = system.Probabilities(fit.beta_hat);
  PropensityModel model(basis, fit.beta_hat, system.link());
  const AttEstimate estimate = AttFromProbabilities(sample, pi);
  return AttFit{std::move(fit), std::move(model), std::move(pi), estimate};
}

}  // namespace cbps
