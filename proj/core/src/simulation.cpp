#include "cbps/simulation.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <exception>
#include <random>
#include <thread>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "cbps/errors.hpp"
#include "cbps/estimators.hpp"
#include "cbps/inference.hpp"
#include "cbps/propensity.hpp"

namespace cbps {

namespace {

constexpr double kX1Mean = 3.0;

double Expit(double eta) { return LinkValue(Link::kLogit, eta); }

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double SumFunctions(const FunctionList& fns, std::span<const double> x) {
  double s = 0.0;
  for (const auto& f : fns) s += f(x);
  return s;
}

// E[X^k] for X ~ N(mean, sd^2).
double NormalRawMoment(double mean, double sd, int k) {
  double prev = 1.0;
  double cur = mean;
  if (k == 0) return prev;
  for (int j = 2; j <= k; ++j) {
    const double next = mean * cur + (j - 1) * sd * sd * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

double ExpectedFunction(const DgpSpec& spec, const CovariateFunction& f) {
  double value = 1.0;
  const auto& e = f.exponents();
  for (std::size_t j = 0; j < e.size(); ++j) {
    value *= j == 0 ? NormalRawMoment(kX1Mean, spec.x1_sd, e[j]) : NormalRawMoment(0.0, 1.0, e[j]);
  }
  return value;
}

template <typename Rng>
void DrawCovariates(const DgpSpec& spec, Rng& rng, std::normal_distribution<double>& normal,
                    double* x) {
  x[0] = kX1Mean + spec.x1_sd * normal(rng);
  for (int j = 1; j < kNumCovariates; ++j) x[j] = normal(rng);
}

struct Working {
  FunctionList basis = WorkingBasis();
  BalanceSpec spec{ParseFunctionSpec("1,x2,x3,x4"), ParseFunctionSpec("x1")};
  BalanceSpec sieve{ParseFunctionSpec("1,x2,x3,x4,x1^2,x2^2,x3^2,x4^2"), ParseFunctionSpec("x1")};
};

bool Covers(double estimate, double variance, int n, double truth) {
  const Interval ci = ConfidenceInterval(estimate, variance, n, 0.95);
  return ci.low <= truth && truth <= ci.high;
}

RepOutcome RunEstimator(EstimatorId id, const Replication& rep, const Working& w,
                        const McOptions& options, double truth) {
  const ObservedSample& sample = rep.sample;
  const int n = sample.n();
  RepOutcome out;
  VarianceEstimate var;
  switch (id) {
    case EstimatorId::kTrue: {
      out.estimate = Iptw(sample, rep.true_pi);
      var = VarTrue(sample, rep.true_pi);
      break;
    }
    case EstimatorId::kGlm: {
      const AteFit fit = FitGlmAte(sample, w.basis);
      const OutcomeFits fits = FitOutcomes(sample, w.spec);
      out.estimate = fit.estimate;
      out.clips = fit.fit.clip_events;
      var = VarGlm(sample, fit.model, fits, w.spec);
      break;
    }
    case EstimatorId::kCbps: {
      const MomentSystem system = MomentSystem::Cbps(sample, w.basis, w.basis);
      const FitResult fit = Solve(system, options.gmm);
      const Eigen::VectorXd pi = system.Probabilities(fit.beta_hat);
      const OutcomeFits fits = FitOutcomes(sample, w.spec);
      out.estimate = Iptw(sample, pi);
      out.clips = fit.clip_events;
      var = VarCbps(system, fit.beta_hat, fits, w.spec);
      break;
    }
    case EstimatorId::kOcbps: {
      const MomentSystem system = MomentSystem::Ocbps(sample, w.spec, w.basis);
      const FitResult fit = Solve(system, options.gmm);
      const Eigen::VectorXd pi = system.Probabilities(fit.beta_hat);
      const OutcomeFits fits = FitOutcomes(sample, w.spec);
      out.estimate = Iptw(sample, pi);
      out.clips = fit.clip_events;
      const VarianceEstimate vopt = VarVoptPlugin(sample, pi, fits, w.spec);
      out.vopt = vopt.value;
      var = options.ocbps_ci == OcbpsCi::kVopt ? vopt : VarOcbps(system, fit.beta_hat, fits);
      break;
    }
    case EstimatorId::kAipw: {
      const AteFit fit = FitGlmAte(sample, w.basis);
      const OutcomeFits fits = FitOutcomes(sample, w.spec);
      out.estimate = Aipw(sample, fit.pi, fits, w.spec);
      out.clips = fit.fit.clip_events;
      var = VarAipw(sample, fit.pi, fits, w.spec);
      break;
    }
    case EstimatorId::kOcbpsSieve: {
      const FunctionList basis = w.sieve.Union();
      const AteFit fit = FitOcbpsSieve(sample, w.sieve, basis, Link::kLogit, options.gmm);
      const OutcomeFits fits = FitOutcomes(sample, w.sieve);
      out.estimate = fit.estimate;
      out.clips = fit.fit.clip_events;
      var = VarVoptPlugin(sample, fit.pi, fits, w.sieve);
      out.vopt = var.value;
      break;
    }
  }
  out.variance = var.value;
  out.floored = var.floored;
  out.covered = Covers(out.estimate, out.variance, n, truth);
  out.ok = std::isfinite(out.estimate);
  return out;
}

EstimatorSummary Summarize(EstimatorId id, std::vector<RepOutcome> reps, double truth) {
  EstimatorSummary s;
  s.id = id;
  int ok = 0;
  double sum = 0.0;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    ++ok;
    sum += r.estimate;
  }
  if (ok == 0) {
    const double nan = std::nan("");
    s.mean = s.bias = s.sd = s.rmse = s.coverage = nan;
    s.mean_clips = s.mean_variance = s.mean_vopt = nan;
    s.reps = std::move(reps);
    return s;
  }
  s.mean = sum / ok;
  double ss_mean = 0.0;
  double ss_truth = 0.0;
  int covered = 0;
  double clips = 0.0;
  double var = 0.0;
  double vopt = 0.0;
  for (const auto& r : reps) {
    if (!r.ok) continue;
    ss_mean += (r.estimate - s.mean) * (r.estimate - s.mean);
    ss_truth += (r.estimate - truth) * (r.estimate - truth);
    covered += r.covered ? 1 : 0;
    s.floorings += r.floored ? 1 : 0;
    clips += r.clips;
    var += r.variance;
    vopt += r.vopt;
  }
  s.bias = s.mean - truth;
  s.sd = std::sqrt(ss_mean / ok);
  s.rmse = std::sqrt(ss_truth / ok);
  s.coverage = static_cast<double>(covered) / ok;
  s.mean_clips = clips / ok;
  s.mean_variance = var / ok;
  s.mean_vopt = vopt / ok;
  s.reps = std::move(reps);
  return s;
}

std::string Format6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string_view ScenarioName(Scenario scenario) {
  switch (scenario) {
    case Scenario::kBothCorrect: return "both-correct";
    case Scenario::kPsMisspecified: return "ps-misspecified";
    case Scenario::kPsLocal: return "ps-local";
    case Scenario::kOutcomeMisspecified: return "outcome-misspecified";
    case Scenario::kBothMisspecified: return "both-misspecified";
    case Scenario::kCustom: return "custom";
  }
  return "unknown";
}

Scenario ParseScenario(std::string_view name) {
  for (Scenario s : {Scenario::kBothCorrect, Scenario::kPsMisspecified, Scenario::kPsLocal,
                     Scenario::kOutcomeMisspecified, Scenario::kBothMisspecified,
                     Scenario::kCustom}) {
    if (ScenarioName(s) == name) return s;
  }
  throw ParseError("unknown scenario '" + std::string(name) + "'");
}

double DgpSpec::Xi() const {
  return xi.value_or(1.0 / std::sqrt(static_cast<double>(n)));
}

bool DgpSpec::Tilted() const {
  return scenario == Scenario::kPsLocal || scenario == Scenario::kCustom;
}

bool DgpSpec::QuadraticOutcome() const {
  return scenario == Scenario::kOutcomeMisspecified || scenario == Scenario::kBothMisspecified;
}

bool DgpSpec::TransformedPropensity() const {
  return scenario == Scenario::kPsMisspecified || scenario == Scenario::kBothMisspecified;
}

void DgpSpec::Validate() const {
  if (n < 10) throw ValidationError("n must be >= 10");
  if (!std::isfinite(beta1)) throw ValidationError("beta1 must be finite");
  if (xi && !(*xi >= 0.0)) throw ValidationError("xi must be >= 0");
  if (!(truncation > 0.0 && truncation < 1.0)) {
    throw ValidationError("truncation must lie in (0, 1)");
  }
  if (!(x1_sd > 0.0)) throw ValidationError("x1 standard deviation must be positive");
  if (!std::isfinite(delta)) throw ValidationError("delta must be finite");
  ValidateIndices({u}, kNumCovariates);
  ValidateIndices(r1, kNumCovariates);
  ValidateIndices(r2, kNumCovariates);
}

FunctionList WorkingBasis() { return ParseFunctionSpec("1,x1,x2,x3,x4"); }

Eigen::VectorXd WorkingBeta(const DgpSpec& spec) {
  Eigen::VectorXd beta(5);
  beta << 0.0, -spec.beta1, 0.5, -0.25, -0.1;
  return beta;
}

double BasePropensity(const DgpSpec& spec, std::span<const double> x) {
  double x1 = x[0], x2 = x[1], x3 = x[2], x4 = x[3];
  if (spec.TransformedPropensity()) {
    const double a = std::exp(x1 / 3.0);
    const double b = x2 / (1.0 + std::exp(x1)) + 10.0;
    const double c = x1 * x3 / 25.0 + 0.6;
    const double d = x1 + x4 + 20.0;
    x1 = a, x2 = b, x3 = c, x4 = d;
  }
  return Expit(-spec.beta1 * x1 + 0.5 * x2 - 0.25 * x3 - 0.1 * x4);
}

double TrueK(const DgpSpec& spec, std::span<const double> x) {
  if (spec.QuadraticOutcome()) {
    return 200.0 + 13.7 * (x[1] * x[1] + x[2] * x[2] + x[3] * x[3]);
  }
  double k = 200.0 + 13.7 * (x[1] + x[2] + x[3]);
  if (spec.scenario == Scenario::kCustom) k += spec.delta * SumFunctions(spec.r1, x);
  return k;
}

double TrueL(const DgpSpec& spec, std::span<const double> x) {
  if (spec.QuadraticOutcome()) return 27.4 * x[0] * x[0];
  double l = 27.4 * x[0];
  if (spec.scenario == Scenario::kCustom) l += spec.delta * SumFunctions(spec.r2, x);
  return l;
}

double TrueAte(const DgpSpec& spec) {
  if (spec.QuadraticOutcome()) {
    return 27.4 * NormalRawMoment(kX1Mean, spec.x1_sd, 2);
  }
  double ate = 27.4 * kX1Mean;
  if (spec.scenario == Scenario::kCustom) {
    for (const auto& f : spec.r2) ate += spec.delta * ExpectedFunction(spec, f);
  }
  return ate;
}

std::uint64_t ReplicationSeed(std::uint64_t base_seed, std::uint64_t r) {
  return SplitMix64(SplitMix64(base_seed) ^ r);
}

Replication DrawReplication(const DgpSpec& spec, std::uint64_t seed) {
  spec.Validate();
  const int n = spec.n;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Eigen::MatrixXd x(n, kNumCovariates);
  Eigen::VectorXd t(n), y(n), pi(n);
  int caps = 0;
  const double xi = spec.Xi();
  double row[kNumCovariates];
  for (int i = 0; i < n; ++i) {
    DrawCovariates(spec, rng, normal, row);
    const std::span<const double> xs(row, kNumCovariates);
    double p = BasePropensity(spec, xs);
    if (spec.Tilted()) {
      p *= std::exp(xi * spec.u(xs));
      if (p > spec.truncation) {
        p = spec.truncation;
        ++caps;
      }
    }
    const double treat = unif(rng) < p ? 1.0 : 0.0;
    const double eps = normal(rng);
    const double y0 = TrueK(spec, xs) + eps;
    const double y1 = y0 + TrueL(spec, xs);
    for (int j = 0; j < kNumCovariates; ++j) x(i, j) = row[j];
    t[i] = treat;
    y[i] = treat == 1.0 ? y1 : y0;
    pi[i] = p;
  }
  return Replication{ObservedSample(std::move(x), std::move(t), std::move(y)), std::move(pi), caps};
}

std::string_view EstimatorName(EstimatorId id) {
  switch (id) {
    case EstimatorId::kTrue: return "true";
    case EstimatorId::kGlm: return "glm";
    case EstimatorId::kCbps: return "cbps";
    case EstimatorId::kOcbps: return "ocbps";
    case EstimatorId::kAipw: return "aipw";
    case EstimatorId::kOcbpsSieve: return "ocbps-sieve";
  }
  return "unknown";
}

EstimatorId ParseEstimator(std::string_view name) {
  for (EstimatorId id : {EstimatorId::kTrue, EstimatorId::kGlm, EstimatorId::kCbps,
                         EstimatorId::kOcbps, EstimatorId::kAipw, EstimatorId::kOcbpsSieve}) {
    if (EstimatorName(id) == name) return id;
  }
  throw ParseError("unknown estimator '" + std::string(name) + "'");
}

std::vector<EstimatorId> ParseEstimatorList(std::string_view text) {
  std::vector<EstimatorId> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view token = text.substr(start, end - start);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    const EstimatorId id = ParseEstimator(token);
    if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
    start = end + 1;
  }
  return out;
}

const EstimatorSummary& McSummary::Get(EstimatorId id) const {
  for (const auto& e : estimators) {
    if (e.id == id) return e;
  }
  throw ValidationError("estimator " + std::string(EstimatorName(id)) + " not in summary");
}

McSummary RunMonteCarlo(const DgpSpec& spec, const std::vector<EstimatorId>& estimators,
                        const McOptions& options) {
  spec.Validate();
  if (options.reps < 1) throw ValidationError("reps must be >= 1");
  if (estimators.empty()) throw ValidationError("no estimators requested");
  const double truth = TrueAte(spec);
  const Working working;
  const int reps = options.reps;
  const std::size_t k = estimators.size();
  std::vector<RepOutcome> table(static_cast<std::size_t>(reps) * k);

  auto run_rep = [&](int r) {
    const std::uint64_t seed = ReplicationSeed(options.base_seed, static_cast<std::uint64_t>(r));
    McOptions local = options;
    local.gmm.restart_seed = seed;
    std::optional<Replication> rep;
    try {
      rep.emplace(DrawReplication(spec, seed));
    } catch (const std::exception&) {
      return;  // every estimator counts this replication as a failure
    }
    for (std::size_t e = 0; e < k; ++e) {
      try {
        table[static_cast<std::size_t>(r) * k + e] =
            RunEstimator(estimators[e], *rep, working, local, truth);
      } catch (const std::exception&) {
        table[static_cast<std::size_t>(r) * k + e] = RepOutcome{};
      }
    }
  };

  int threads = options.threads > 0 ? options.threads
                                    : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, reps);
  if (threads == 1) {
    for (int r = 0; r < reps; ++r) run_rep(r);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (int r = w; r < reps; r += threads) run_rep(r);
      });
    }
    for (auto& th : pool) th.join();
  }

  McSummary summary;
  summary.spec = spec;
  summary.reps = reps;
  summary.seed = options.base_seed;
  summary.true_ate = truth;
  for (std::size_t e = 0; e < k; ++e) {
    std::vector<RepOutcome> column(reps);
    for (int r = 0; r < reps; ++r) column[r] = table[static_cast<std::size_t>(r) * k + e];
    summary.estimators.push_back(Summarize(estimators[e], std::move(column), truth));
    if (summary.estimators.back().failures * 20 > reps) summary.valid = false;
  }
  return summary;
}

std::string FormatTable(const McSummary& summary) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "scenario %s  n=%d  beta1=%g  reps=%d  seed=%llu  true ATE=%g\n",
                std::string(ScenarioName(summary.spec.scenario)).c_str(), summary.spec.n,
                summary.spec.beta1, summary.reps,
                static_cast<unsigned long long>(summary.seed), summary.true_ate);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-12s %10s %10s %10s %10s %9s\n", "estimator", "bias", "sd",
                "rmse", "coverage", "failures");
  out += buf;
  for (const auto& e : summary.estimators) {
    std::snprintf(buf, sizeof buf, "%-12s %10.2f %10.2f %10.2f %10.3f %9d\n",
                  std::string(EstimatorName(e.id)).c_str(), e.bias, e.sd, e.rmse, e.coverage,
                  e.failures);
    out += buf;
  }
  if (!summary.valid) out += "INVALID: failures exceed 5% of replications\n";
  return out;
}

std::string FormatCsv(const McSummary& summary) {
  std::string out = "estimator,bias,sd,rmse,coverage,failures\n";
  for (const auto& e : summary.estimators) {
    out += std::string(EstimatorName(e.id)) + ',' + Format6(e.bias) + ',' + Format6(e.sd) + ',' +
           Format6(e.rmse) + ',' + Format6(e.coverage) + ',' + std::to_string(e.failures) + '\n';
  }
  return out;
}

BalanceMap BalanceMapFromFunctions(FunctionList fns) {
  return [fns = std::move(fns)](const Eigen::MatrixXd& x) { return DesignMatrix(fns, x); };
}

BalanceMap MakeOptimalF(const DgpSpec& spec, FunctionList fillers) {
  return [spec, fillers = std::move(fillers)](const Eigen::MatrixXd& x) {
    const Eigen::Index n = x.rows();
    const Eigen::VectorXd beta = WorkingBeta(spec);
    const Eigen::MatrixXd b = DesignMatrix(WorkingBasis(), x);
    Eigen::MatrixXd out(n, 1 + static_cast<Eigen::Index>(fillers.size()));
    std::vector<double> row(x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) row[j] = x(i, j);
      const double pi = Expit(b.row(i).dot(beta));
      const double k = TrueK(spec, row);
      const double l = TrueL(spec, row);
      out(i, 0) = pi * k + (1.0 - pi) * (k + l);
    }
    if (!fillers.empty()) out.rightCols(fillers.size()) = DesignMatrix(fillers, x);
    return out;
  };
}

namespace {

struct OracleTerms {
  double term1 = 0.0;
  double term2 = 0.0;
  double condition = 1.0;
};

OracleTerms OracleOnRows(const DgpSpec& spec, const Eigen::MatrixXd& x, const BalanceMap& fmap,
                         bool optimal_weight) {
  const Eigen::Index n = x.rows();
  const Eigen::VectorXd beta = WorkingBeta(spec);
  const Eigen::MatrixXd b = DesignMatrix(WorkingBasis(), x);
  const Eigen::MatrixXd f = fmap(x);
  if (f.rows() != n) throw DimensionError("balance map returned the wrong number of rows");
  const Eigen::Index m = f.cols();
  const Eigen::Index q = b.cols();
  if (m < q) throw ValidationError("balance functions fewer than propensity parameters");

  Eigen::VectorXd pi(n), k(n), l(n), u(n);
  std::vector<double> row(x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) row[j] = x(i, j);
    pi[i] = Expit(b.row(i).dot(beta));
    k[i] = TrueK(spec, row);
    l[i] = TrueL(spec, row);
    u[i] = spec.u(row);
  }
  const Eigen::ArrayXd p = pi.array();
  const double inv_n = 1.0 / static_cast<double>(n);

  OracleTerms out;
  out.term1 = (u.array() * (k.array() + l.array() * (1.0 - p)) / (1.0 - p)).mean();
  // With a logistic link d pi / d beta = pi (1 - pi) b.
  const Eigen::VectorXd hy = -inv_n * (b.transpose() * (k.array() + (1.0 - p) * l.array()).matrix());
  const Eigen::MatrixXd hf = -inv_n * (f.transpose() * b);
  const Eigen::VectorXd e = inv_n * (f.transpose() * (u.array() / (1.0 - p)).matrix());

  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(m, m);
  if (optimal_weight) {
    const Eigen::VectorXd s = (p * (1.0 - p)).inverse().matrix();
    const Eigen::MatrixXd omega = inv_n * (f.transpose() * s.asDiagonal() * f);
    w = RidgedOmega(omega).inverse();
  }
  const Eigen::MatrixXd a = hf.transpose() * w * hf;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible()) throw SingularDesignError("H_f' W H_f is singular");
  out.term2 = hy.dot(lu.solve(hf.transpose() * (w * e)));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  out.condition = sv[0] / sv[sv.size() - 1];
  return out;
}

}  // namespace

OracleResult BiasOracleB(const DgpSpec& spec, const BalanceMap& f, int draws, std::uint64_t seed,
                         bool optimal_weight, int batches) {
  spec.Validate();
  if (batches < 2 || draws < 2 * batches) {
    throw ValidationError("oracle needs at least two batches of two draws");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(draws, kNumCovariates);
  double row[kNumCovariates];
  for (int i = 0; i < draws; ++i) {
    DrawCovariates(spec, rng, normal, row);
    for (int j = 0; j < kNumCovariates; ++j) x(i, j) = row[j];
  }

  const OracleTerms full = OracleOnRows(spec, x, f, optimal_weight);
  OracleResult result;
  result.value = full.term1 - full.term2;

  const int per = draws / batches;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int g = 0; g < batches; ++g) {
    const OracleTerms t = OracleOnRows(spec, x.middleRows(g * per, per), f, optimal_weight);
    const double v = t.term1 - t.term2;
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / batches;
  const double var = std::max(0.0, (sum_sq - batches * mean * mean) / (batches - 1));
  // Batch means estimate the error of a batch-sized oracle; rescale to all draws.
  result.mc_std_error = std::sqrt(var / batches) * std::sqrt(static_cast<double>(per) * batches / draws);
  // Floating-point error of the two terms and the linear solve.
  const double rounding = DBL_EPSILON * std::sqrt(static_cast<double>(draws)) * full.condition *
                          (std::abs(full.term1) + std::abs(full.term2));
  result.std_error = std::hypot(result.mc_std_error, rounding);
  return result;
}

}  // namespace cbps
