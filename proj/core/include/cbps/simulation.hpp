#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cbps/design.hpp"
#include "cbps/gmm.hpp"

namespace cbps {

// Scenario names follow the five simulation tables in order.
enum class Scenario {
  kBothCorrect,          // linear outcome, logistic propensity
  kPsMisspecified,       // propensity on transformed covariates
  kPsLocal,              // exponential tilt of the logistic propensity
  kOutcomeMisspecified,  // quadratic outcome
  kBothMisspecified,     // transformed propensity and quadratic outcome
  kCustom,               // tilted propensity, linear outcome plus delta * (r1, r2)
};

std::string_view ScenarioName(Scenario scenario);
Scenario ParseScenario(std::string_view name);

struct DgpSpec {
  Scenario scenario = Scenario::kBothCorrect;
  int n = 1000;
  double beta1 = 0.0;
  std::optional<double> xi;  // tilt magnitude, default n^{-1/2}
  CovariateFunction u = CovariateFunction::Square(1);
  double delta = 0.0;
  FunctionList r1;  // added to E[Y(0)|X] with weight delta (custom only)
  FunctionList r2;  // added to E[Y(1)-Y(0)|X] with weight delta (custom only)
  double truncation = 0.95;
  // X1 ~ N(3, x1_sd^2). The default reads N(3,2) as variance 2.
  double x1_sd = 1.4142135623730951;

  double Xi() const;
  bool Tilted() const;
  bool QuadraticOutcome() const;
  bool TransformedPropensity() const;
  void Validate() const;
};

inline constexpr int kNumCovariates = 4;

struct Replication {
  ObservedSample sample;
  Eigen::VectorXd true_pi;
  int cap_events = 0;
};

// Deterministic in (spec, seed).
Replication DrawReplication(const DgpSpec& spec, std::uint64_t seed);

// Population ATE E[Y(1) - Y(0)] from closed-form normal moments.
double TrueAte(const DgpSpec& spec);

// Population propensity (before tilting) and the working-model parameters.
double BasePropensity(const DgpSpec& spec, std::span<const double> x);
FunctionList WorkingBasis();  // 1, x1, x2, x3, x4
Eigen::VectorXd WorkingBeta(const DgpSpec& spec);
// E[Y(0)|X] and E[Y(1)-Y(0)|X].
double TrueK(const DgpSpec& spec, std::span<const double> x);
double TrueL(const DgpSpec& spec, std::span<const double> x);

// Counter-based seed for replication r.
std::uint64_t ReplicationSeed(std::uint64_t base_seed, std::uint64_t r);

enum class EstimatorId { kTrue, kGlm, kCbps, kOcbps, kAipw, kOcbpsSieve };

std::string_view EstimatorName(EstimatorId id);
EstimatorId ParseEstimator(std::string_view name);
std::vector<EstimatorId> ParseEstimatorList(std::string_view text);

// Confidence interval variance used for the oCBPS rows.
enum class OcbpsCi {
  kSandwich,  // Sigma_mu - v' G (G' Omega^{-1} G)^{-1} G' v
  kVopt,      // efficiency-bound plug-in
};

struct McOptions {
  int reps = 500;
  std::uint64_t base_seed = 1;
  int threads = 0;  // 0: hardware concurrency
  OcbpsCi ocbps_ci = OcbpsCi::kVopt;
  GmmOptions gmm;
};

struct RepOutcome {
  bool ok = false;
  double estimate = 0.0;
  double variance = 0.0;
  double vopt = 0.0;  // efficiency-bound plug-in, oCBPS rows only
  bool covered = false;
  bool floored = false;
  int clips = 0;
};

struct EstimatorSummary {
  EstimatorId id = EstimatorId::kOcbps;
  double mean = 0.0;
  double bias = 0.0;
  double sd = 0.0;    // 1/N normalization, so rmse^2 = bias^2 + sd^2
  double rmse = 0.0;
  double coverage = 0.0;
  int failures = 0;
  int floorings = 0;
  double mean_clips = 0.0;
  double mean_variance = 0.0;
  double mean_vopt = 0.0;
  std::vector<RepOutcome> reps;
};

struct McSummary {
  DgpSpec spec;
  int reps = 0;
  std::uint64_t seed = 0;
  double true_ate = 0.0;
  bool valid = true;  // false when any estimator fails on more than 5% of reps
  std::vector<EstimatorSummary> estimators;

  const EstimatorSummary& Get(EstimatorId id) const;
};

McSummary RunMonteCarlo(const DgpSpec& spec, const std::vector<EstimatorId>& estimators,
                        const McOptions& options = {});

// Fixed-width text table and CSV (estimator,bias,sd,rmse,coverage,failures).
std::string FormatTable(const McSummary& summary);
std::string FormatCsv(const McSummary& summary);

// Balance functions evaluated on an N x d covariate matrix.
using BalanceMap = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

BalanceMap BalanceMapFromFunctions(FunctionList fns);
// First column pi* K + (1 - pi*)(K + L) under the working model at beta*,
// followed by `fillers`.
BalanceMap MakeOptimalF(const DgpSpec& spec, FunctionList fillers);

struct OracleResult {
  double value = 0.0;
  double std_error = 0.0;      // batch-means Monte Carlo error combined with rounding error
  double mc_std_error = 0.0;   // batch-means part only
};

// Asymptotic bias B of CBPS under the exponential tilt, integrated over
// `draws` covariate vectors. W is identity or Omega^{-1}.
OracleResult BiasOracleB(const DgpSpec& spec, const BalanceMap& f, int draws, std::uint64_t seed,
                         bool optimal_weight = false, int batches = 20);

}  // namespace cbps
