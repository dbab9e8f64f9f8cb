#include "cbps/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "cbps/errors.hpp"

namespace cbps {

namespace {

constexpr double kDivergenceBound = 1e3;
constexpr double kLambda0 = 1e-3;
constexpr double kLambdaMax = 1e20;

struct LmOutcome {
  Eigen::VectorXd beta;
  Eigen::VectorXd gbar;
  double objective = std::numeric_limits<double>::infinity();
  double gradient_norm = std::numeric_limits<double>::infinity();
  bool converged = false;
};

// Minimizes g-bar' W g-bar from `beta`. With `root` set, convergence is
// max|g-bar| <= tol; otherwise ||2 J' W g-bar||_inf <= tol.
LmOutcome RunLevenbergMarquardt(const MomentSystem& system, const Eigen::MatrixXd& weight,
                                Eigen::VectorXd beta, double tol, int max_iter, bool root,
                                int* iterations) {
  const Eigen::LLT<Eigen::MatrixXd> chol(weight);
  if (chol.info() != Eigen::Success) {
    throw ValidationError("GMM weighting matrix must be positive definite");
  }
  const Eigen::MatrixXd lower_t = chol.matrixL().transpose();

  LmOutcome out;
  auto objective_at = [&](const Eigen::VectorXd& b, Eigen::VectorXd* gbar) {
    try {
      *gbar = system.Moments(b);
    } catch (const EvaluationError&) {
      return std::numeric_limits<double>::infinity();
    }
    return gbar->dot(weight * *gbar);
  };

  Eigen::VectorXd gbar;
  double q = objective_at(beta, &gbar);
  if (!std::isfinite(q)) {
    out.beta = beta;
    return out;
  }
  double lambda = kLambda0;

  for (int iter = 0;; ++iter) {
    const Eigen::MatrixXd jac = system.Jacobian(beta);
    const Eigen::VectorXd grad = 2.0 * jac.transpose() * (weight * gbar);
    out.beta = beta;
    out.gbar = gbar;
    out.objective = q;
    out.gradient_norm = grad.lpNorm<Eigen::Infinity>();
    const double criterion = root ? gbar.lpNorm<Eigen::Infinity>() : out.gradient_norm;
    if (criterion <= tol) {
      out.converged = true;
      return out;
    }
    if (iter >= max_iter) return out;
    ++*iterations;

    const Eigen::MatrixXd jr = lower_t * jac;
    const Eigen::VectorXd r = lower_t * gbar;
    const Eigen::MatrixXd a = jr.transpose() * jr;
    const Eigen::VectorXd rhs = -(jr.transpose() * r);
    Eigen::VectorXd diag = a.diagonal();
    const double diag_floor = 1e-12 * std::max(diag.maxCoeff(), 1e-300);
    diag = diag.cwiseMax(diag_floor);

    bool accepted = false;
    while (lambda <= kLambdaMax) {
      Eigen::MatrixXd damped = a;
      damped.diagonal() += lambda * diag;
      const Eigen::VectorXd step = damped.ldlt().solve(rhs);
      const Eigen::VectorXd trial = beta + step;
      if (step.allFinite() && trial.lpNorm<Eigen::Infinity>() <= kDivergenceBound) {
        Eigen::VectorXd trial_gbar;
        const double trial_q = objective_at(trial, &trial_gbar);
        if (std::isfinite(trial_q) && trial_q < q) {
          beta = trial;
          gbar = std::move(trial_gbar);
          q = trial_q;
          lambda = std::max(lambda / 10.0, 1e-15);
          accepted = true;
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!accepted) return out;  // stalled
  }
}

std::vector<Eigen::VectorXd> StartingPoints(const MomentSystem& system,
                                            const GmmOptions& options) {
  const int q = system.num_params();
  std::vector<Eigen::VectorXd> starts;
  switch (options.init) {
    case GmmOptions::Init::kMle:
      if (system.link() == Link::kLogit) {
        try {
          starts.push_back(FitMle(system.sample(), system.basis()).coefficients());
        } catch (const Error&) {
          // Separation or rank deficiency: fall through to the other starts.
        }
      }
      break;
    case GmmOptions::Init::kFixed:
      if (options.beta0.size() != q) {
        throw DimensionError("initial beta has length " + std::to_string(options.beta0.size()) +
                             ", expected " + std::to_string(q));
      }
      starts.push_back(options.beta0);
      break;
    case GmmOptions::Init::kZeros:
      break;
  }
  starts.push_back(Eigen::VectorXd::Zero(q));
  std::mt19937_64 rng(options.restart_seed);
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  for (int r = 0; r < options.restarts; ++r) {
    Eigen::VectorXd b(q);
    for (int k = 0; k < q; ++k) b[k] = unif(rng);
    starts.push_back(std::move(b));
  }
  return starts;
}

}  // namespace

MomentSystem::MomentSystem(MomentKind kind, const ObservedSample& sample, FunctionList basis,
                           Eigen::MatrixXd balance, int m1, Link link)
    : kind_(kind),
      sample_(&sample),
      basis_(std::move(basis)),
      basis_matrix_(DesignMatrix(basis_, sample)),
      balance_matrix_(std::move(balance)),
      m1_(m1),
      num_moments_(kind == MomentKind::kScore ? static_cast<int>(basis_matrix_.cols())
                                              : static_cast<int>(balance_matrix_.cols())),
      link_(link) {
  if (basis_.empty()) throw ValidationError("propensity basis must be non-empty");
  if (num_moments_ < num_params()) {
    throw ValidationError("moment dimension m = " + std::to_string(num_moments_) +
                          " is smaller than the parameter dimension q = " +
                          std::to_string(num_params()));
  }
}

MomentSystem MomentSystem::Cbps(const ObservedSample& sample, const FunctionList& f,
                                const FunctionList& basis, Link link) {
  if (f.empty()) throw ValidationError("balance function list f must be non-empty");
  Eigen::MatrixXd balance = DesignMatrix(f, sample);
  const int m = static_cast<int>(f.size());
  return MomentSystem(MomentKind::kCbps, sample, basis, std::move(balance), m, link);
}

MomentSystem MomentSystem::Ocbps(const ObservedSample& sample, const BalanceSpec& spec,
                                 const FunctionList& basis, Link link) {
  Eigen::MatrixXd balance = DesignMatrix(spec.Stacked(), sample);
  return MomentSystem(MomentKind::kOcbps, sample, basis, std::move(balance), spec.m1(), link);
}

MomentSystem MomentSystem::Att(const ObservedSample& sample, const FunctionList& f,
                               const FunctionList& basis, Link link) {
  if (f.empty()) throw ValidationError("balance function list f must be non-empty");
  Eigen::MatrixXd balance = DesignMatrix(f, sample);
  const int m = static_cast<int>(f.size());
  return MomentSystem(MomentKind::kAtt, sample, basis, std::move(balance), m, link);
}

MomentSystem MomentSystem::Score(const ObservedSample& sample, const FunctionList& basis,
                                 Link link) {
  return MomentSystem(MomentKind::kScore, sample, basis, Eigen::MatrixXd(),
                      static_cast<int>(basis.size()), link);
}

void MomentSystem::CheckBeta(const Eigen::VectorXd& beta) const {
  if (beta.size() != num_params()) {
    throw DimensionError("beta has length " + std::to_string(beta.size()) + ", expected " +
                         std::to_string(num_params()));
  }
}

MomentSystem::Point MomentSystem::Evaluate(const Eigen::VectorXd& beta) const {
  CheckBeta(beta);
  const Eigen::VectorXd eta = basis_matrix_ * beta;
  const Eigen::Index n = eta.size();
  Point p;
  p.pi.resize(n);
  p.dpi.resize(n);
  p.d2pi.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double raw = LinkValue(link_, eta[i]);
    if (raw < kPiClip || raw > 1.0 - kPiClip || !std::isfinite(eta[i])) {
      p.pi[i] = std::clamp(raw, kPiClip, 1.0 - kPiClip);
      p.dpi[i] = 0.0;
      p.d2pi[i] = 0.0;
      ++p.clips;
    } else {
      p.pi[i] = raw;
      p.dpi[i] = LinkDerivative(link_, eta[i]);
      p.d2pi[i] = LinkSecondDerivative(link_, eta[i]);
    }
  }
  return p;
}

Eigen::VectorXd MomentSystem::Probabilities(const Eigen::VectorXd& beta, int* clip_events) const {
  Point p = Evaluate(beta);
  if (clip_events != nullptr) *clip_events = p.clips;
  return std::move(p.pi);
}

Eigen::MatrixXd MomentSystem::UnitMoments(const Eigen::VectorXd& beta) const {
  const Point p = Evaluate(beta);
  const Eigen::VectorXd& t = sample_->treatment();
  const Eigen::ArrayXd pi = p.pi.array();
  const Eigen::ArrayXd w_balance = t.array() / pi - (1.0 - t.array()) / (1.0 - pi);

  Eigen::MatrixXd g;
  switch (kind_) {
    case MomentKind::kCbps:
      g = w_balance.matrix().asDiagonal() * balance_matrix_;
      break;
    case MomentKind::kOcbps: {
      const Eigen::Index n = balance_matrix_.rows();
      const Eigen::Index m2 = num_moments_ - m1_;
      g.resize(n, num_moments_);
      g.leftCols(m1_) = w_balance.matrix().asDiagonal() * balance_matrix_.leftCols(m1_);
      const Eigen::VectorXd w2 = (t.array() / pi - 1.0).matrix();
      g.rightCols(m2) = w2.asDiagonal() * balance_matrix_.rightCols(m2);
      break;
    }
    case MomentKind::kAtt: {
      const Eigen::VectorXd w = (t.array() - (1.0 - t.array()) * pi / (1.0 - pi)).matrix();
      g = w.asDiagonal() * balance_matrix_;
      break;
    }
    case MomentKind::kScore: {
      const Eigen::VectorXd w = (w_balance * p.dpi.array()).matrix();
      g = w.asDiagonal() * basis_matrix_;
      break;
    }
  }
  if (!g.allFinite()) throw EvaluationError("non-finite moment contribution");
  return g;
}

Eigen::VectorXd MomentSystem::Moments(const Eigen::VectorXd& beta, int* clip_events) const {
  if (clip_events != nullptr) *clip_events = Evaluate(beta).clips;
  const Eigen::MatrixXd g = UnitMoments(beta);
  const Eigen::VectorXd gbar = g.colwise().sum().transpose() / static_cast<double>(g.rows());
  if (!gbar.allFinite()) throw EvaluationError("non-finite moment average");
  return gbar;
}

Eigen::MatrixXd MomentSystem::Jacobian(const Eigen::VectorXd& beta) const {
  const Point p = Evaluate(beta);
  const Eigen::ArrayXd t = sample_->treatment().array();
  const Eigen::ArrayXd pi = p.pi.array();
  const Eigen::ArrayXd dpi = p.dpi.array();
  const double inv_n = 1.0 / static_cast<double>(pi.size());
  // d w / d pi for the balance weight T/pi - (1-T)/(1-pi).
  const Eigen::ArrayXd dw_balance = -t / pi.square() - (1.0 - t) / (1.0 - pi).square();

  Eigen::MatrixXd jac;
  switch (kind_) {
    case MomentKind::kCbps: {
      const Eigen::VectorXd c = (dw_balance * dpi).matrix();
      jac = inv_n * balance_matrix_.transpose() * c.asDiagonal() * basis_matrix_;
      break;
    }
    case MomentKind::kOcbps: {
      const Eigen::Index m2 = num_moments_ - m1_;
      jac.resize(num_moments_, num_params());
      const Eigen::VectorXd c1 = (dw_balance * dpi).matrix();
      jac.topRows(m1_) =
          inv_n * balance_matrix_.leftCols(m1_).transpose() * c1.asDiagonal() * basis_matrix_;
      const Eigen::VectorXd c2 = (-t / pi.square() * dpi).matrix();
      jac.bottomRows(m2) =
          inv_n * balance_matrix_.rightCols(m2).transpose() * c2.asDiagonal() * basis_matrix_;
      break;
    }
    case MomentKind::kAtt: {
      const Eigen::VectorXd c = (-(1.0 - t) / (1.0 - pi).square() * dpi).matrix();
      jac = inv_n * balance_matrix_.transpose() * c.asDiagonal() * basis_matrix_;
      break;
    }
    case MomentKind::kScore: {
      const Eigen::ArrayXd w = t / pi - (1.0 - t) / (1.0 - pi);
      const Eigen::VectorXd c = (dw_balance * dpi.square() + w * p.d2pi.array()).matrix();
      jac = inv_n * basis_matrix_.transpose() * c.asDiagonal() * basis_matrix_;
      break;
    }
  }
  if (!jac.allFinite()) throw EvaluationError("non-finite Jacobian");
  return jac;
}

Eigen::MatrixXd MomentSystem::Omega(const Eigen::VectorXd& beta) const {
  const Eigen::MatrixXd g = UnitMoments(beta);
  Eigen::MatrixXd omega = g.transpose() * g / static_cast<double>(g.rows());
  // Exact symmetry regardless of how the product was blocked.
  omega = omega.triangularView<Eigen::Lower>();
  omega.triangularView<Eigen::StrictlyUpper>() = omega.transpose();
  return omega;
}

Eigen::MatrixXd RidgedOmega(const Eigen::MatrixXd& omega) {
  const double m = static_cast<double>(omega.rows());
  Eigen::MatrixXd out = omega;
  out.diagonal().array() += 1e-8 * omega.trace() / m;
  return out;
}

FitResult Solve(const MomentSystem& system, const GmmOptions& options) {
  if (options.max_iter < 1) throw ValidationError("max_iter must be >= 1");
  if (options.tol < 0.0) throw ValidationError("tol must be positive");
  const int m = system.num_moments();
  const int q = system.num_params();
  const bool just_identified = m == q;
  const double tol = options.tol > 0.0 ? options.tol : (just_identified ? 1e-10 : 1e-8);

  Eigen::MatrixXd first_weight = Eigen::MatrixXd::Identity(m, m);
  if (options.weighting == GmmOptions::Weighting::kFixed) {
    if (options.fixed_weight.rows() != m || options.fixed_weight.cols() != m) {
      throw DimensionError("fixed weighting matrix must be " + std::to_string(m) + " x " +
                           std::to_string(m));
    }
    first_weight = options.fixed_weight;
  }
  const bool two_step = options.weighting == GmmOptions::Weighting::kTwoStep && !just_identified;

  const auto starts = StartingPoints(system, options);
  FitResult best;
  best.objective = std::numeric_limits<double>::infinity();
  double best_criterion = std::numeric_limits<double>::infinity();
  int iterations = 0;

  for (std::size_t s = 0; s < starts.size(); ++s) {
    Eigen::MatrixXd weight = first_weight;
    LmOutcome stage = RunLevenbergMarquardt(system, weight, starts[s], tol, options.max_iter,
                                            just_identified, &iterations);
    if (two_step && stage.gbar.size() == m) {
      Eigen::MatrixXd omega;
      try {
        omega = RidgedOmega(system.Omega(stage.beta));
      } catch (const EvaluationError&) {
        continue;
      }
      weight = omega.inverse();
      weight = 0.5 * (weight + weight.transpose());
      stage = RunLevenbergMarquardt(system, weight, stage.beta, tol, options.max_iter, false,
                                    &iterations);
    }
    if (stage.gbar.size() != m) continue;

    const double criterion =
        just_identified ? stage.gbar.lpNorm<Eigen::Infinity>() : stage.gradient_norm;
    if (criterion < best_criterion) {
      best_criterion = criterion;
      best.beta_hat = stage.beta;
      best.residual = stage.gbar;
      best.weight_used = weight;
      best.objective = stage.objective;
      best.gradient_norm = stage.gradient_norm;
      best.converged = stage.converged;
      best.start_index = static_cast<int>(s);
    }
    if (stage.converged) break;
  }
  best.iterations = iterations;

  if (!best.converged) {
    throw NonConvergenceError(
        "GMM solver did not converge after " + std::to_string(starts.size()) +
            " starts; best residual max-norm " +
            std::to_string(best.residual.size() > 0 ? best.residual.lpNorm<Eigen::Infinity>()
                                                    : best_criterion),
        best.beta_hat,
        best.residual.size() > 0 ? best.residual.lpNorm<Eigen::Infinity>() : best_criterion);
  }

  system.Moments(best.beta_hat, &best.clip_events);
  const Eigen::MatrixXd jac = system.Jacobian(best.beta_hat);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[sv.size() - 1] <= 1e-10 * sv[0]) {
    throw SingularDesignError("Jacobian of the moment conditions is rank deficient at the solution");
  }
  return best;
}

}  // namespace cbps
