#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Core>

#include "cbps/design.hpp"
#include "cbps/propensity.hpp"

namespace cbps {

// Probabilities are clipped to [kPiClip, 1 - kPiClip] whenever moment
// weights are formed.
inline constexpr double kPiClip = 1e-6;

enum class MomentKind {
  kCbps,   // (T/pi - (1-T)/(1-pi)) f(X)
  kOcbps,  // h1 block as kCbps, h2 block (T/pi - 1) h2(X)
  kAtt,    // (T - (1-T) pi/(1-pi)) f(X)
  kScore,  // kCbps with f = d pi / d beta, i.e. the likelihood score
};

// Stacked estimating equations for a propensity model over one sample.
// Holds a non-owning pointer to the sample, which must outlive the system.
class MomentSystem {
 public:
  static MomentSystem Cbps(const ObservedSample& sample, const FunctionList& f,
                           const FunctionList& basis, Link link = Link::kLogit);
  static MomentSystem Ocbps(const ObservedSample& sample, const BalanceSpec& spec,
                            const FunctionList& basis, Link link = Link::kLogit);
  static MomentSystem Att(const ObservedSample& sample, const FunctionList& f,
                          const FunctionList& basis, Link link = Link::kLogit);
  static MomentSystem Score(const ObservedSample& sample, const FunctionList& basis,
                            Link link = Link::kLogit);

  MomentKind kind() const { return kind_; }
  Link link() const { return link_; }
  const ObservedSample& sample() const { return *sample_; }
  const FunctionList& basis() const { return basis_; }
  const Eigen::MatrixXd& basis_matrix() const { return basis_matrix_; }
  // n x m balance functions (empty for kScore, whose f depends on beta).
  const Eigen::MatrixXd& balance_matrix() const { return balance_matrix_; }
  int num_moments() const { return num_moments_; }
  int num_params() const { return static_cast<int>(basis_matrix_.cols()); }
  // Size of the first (h1) block; equals num_moments() except for kOcbps.
  int m1() const { return m1_; }

  // pi_i with clipping applied; clip_events (optional) receives the count.
  Eigen::VectorXd Probabilities(const Eigen::VectorXd& beta, int* clip_events = nullptr) const;

  // Averaged moments g-bar(beta), length m.
  Eigen::VectorXd Moments(const Eigen::VectorXd& beta, int* clip_events = nullptr) const;
  // n x m matrix of per-unit moments g(T_i, X_i).
  Eigen::MatrixXd UnitMoments(const Eigen::VectorXd& beta) const;
  // Analytic m x q Jacobian of Moments.
  Eigen::MatrixXd Jacobian(const Eigen::VectorXd& beta) const;
  // (1/n) sum g_i g_i'.
  Eigen::MatrixXd Omega(const Eigen::VectorXd& beta) const;

 private:
  struct Point {
    Eigen::VectorXd pi;
    Eigen::VectorXd dpi;   // J'(eta), zero where clipped
    Eigen::VectorXd d2pi;  // J''(eta), zero where clipped
    int clips = 0;
  };

  MomentSystem(MomentKind kind, const ObservedSample& sample, FunctionList basis,
               Eigen::MatrixXd balance, int m1, Link link);
  Point Evaluate(const Eigen::VectorXd& beta) const;
  void CheckBeta(const Eigen::VectorXd& beta) const;

  MomentKind kind_;
  const ObservedSample* sample_;
  FunctionList basis_;
  Eigen::MatrixXd basis_matrix_;
  Eigen::MatrixXd balance_matrix_;
  int m1_;
  int num_moments_;
  Link link_;
};

// Same as MomentSystem::Omega plus the scale-relative ridge
// 1e-8 * tr(Omega)/m * I, which keeps the inverse well defined.
Eigen::MatrixXd RidgedOmega(const Eigen::MatrixXd& omega);

struct GmmOptions {
  enum class Weighting { kIdentity, kTwoStep, kFixed };
  enum class Init { kMle, kZeros, kFixed };

  Weighting weighting = Weighting::kTwoStep;
  Eigen::MatrixXd fixed_weight;  // used with Weighting::kFixed
  // 0 selects the default: 1e-10 on max|g-bar| when just identified,
  // 1e-8 on the objective gradient max-norm when over-identified.
  double tol = 0.0;
  int max_iter = 200;
  Init init = Init::kMle;
  Eigen::VectorXd beta0;  // used with Init::kFixed
  int restarts = 3;
  std::uint64_t restart_seed = 0;
};

struct FitResult {
  Eigen::VectorXd beta_hat;
  Eigen::VectorXd residual;  // g-bar at beta_hat
  Eigen::MatrixXd weight_used;
  double objective = 0.0;    // g-bar' W g-bar
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  int clip_events = 0;
  int start_index = 0;  // which initial value produced the solution
};

// Damped Gauss-Newton (Levenberg-Marquardt) GMM solver. Throws
// NonConvergenceError when no start converges and SingularDesignError when
// the Jacobian at the solution is rank deficient.
FitResult Solve(const MomentSystem& system, const GmmOptions& options = {});

}  // namespace cbps
