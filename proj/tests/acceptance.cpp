// Acceptance criteria 1-10 at 500 replications, seed 1. Prints one line per
// criterion and exits nonzero if any fails.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "cbps/errors.hpp"
#include "cbps/estimators.hpp"
#include "cbps/gmm.hpp"
#include "cbps/inference.hpp"
#include "cbps/simulation.hpp"

namespace {

using namespace cbps;

constexpr int kReps = 500;
constexpr std::uint64_t kSeed = 1;
constexpr int kN = 1000;
const double kBetas[] = {0.0, 0.33, 0.67, 1.0};

struct Result {
  bool pass = true;
  std::string detail;

  void Require(bool ok, const char* format, ...) __attribute__((format(printf, 3, 4)));
};

void Result::Require(bool ok, const char* format, ...) {
  char buf[256];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  if (!detail.empty()) detail += "; ";
  detail += buf;
  if (!ok) {
    detail += " [x]";
    pass = false;
  }
}

McSummary Run(Scenario scenario, double beta1, const std::vector<EstimatorId>& ids) {
  DgpSpec spec;
  spec.scenario = scenario;
  spec.n = kN;
  spec.beta1 = beta1;
  McOptions opts;
  opts.reps = kReps;
  opts.base_seed = kSeed;
  const auto t0 = std::chrono::steady_clock::now();
  McSummary s = RunMonteCarlo(spec, ids, opts);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fprintf(stderr, "  ran %s beta1=%.2f in %.1fs\n", std::string(ScenarioName(scenario)).c_str(),
               beta1, secs);
  return s;
}

int ok_reps(const EstimatorSummary& e) { return static_cast<int>(e.reps.size()) - e.failures; }

Result Criterion1(const std::vector<McSummary>& table1) {
  Result r;
  for (std::size_t k = 0; k < table1.size(); ++k) {
    const auto& o = table1[k].Get(EstimatorId::kOcbps);
    const auto& c = table1[k].Get(EstimatorId::kCbps);
    r.Require(table1[k].valid && std::abs(o.bias) <= 0.25 && o.sd >= 1.0 && o.sd <= 1.5 &&
                  std::abs(o.coverage - 0.95) <= 0.03 && c.sd >= 0.9 * o.sd,
              "b1=%.2f ocbps bias %.3f sd %.3f cov %.3f, cbps sd %.3f", kBetas[k], o.bias, o.sd,
              o.coverage, c.sd);
  }
  return r;
}

Result Criterion2(const McSummary& s) {
  Result r;
  const auto& o = s.Get(EstimatorId::kOcbps);
  const auto& g = s.Get(EstimatorId::kGlm);
  const auto& c = s.Get(EstimatorId::kCbps);
  r.Require(s.valid, "valid summary");
  r.Require(std::abs(o.bias) <= 1.0 && o.coverage >= 0.90, "ocbps bias %.3f cov %.3f", o.bias,
            o.coverage);
  r.Require(g.bias <= -25.0, "glm bias %.3f", g.bias);
  r.Require(c.bias >= -5.0 && c.bias <= -1.5, "cbps bias %.3f", c.bias);
  return r;
}

Result Criterion3(const std::vector<McSummary>& table3) {
  Result r;
  for (std::size_t k = 0; k < table3.size(); ++k) {
    const auto& o = table3[k].Get(EstimatorId::kOcbps);
    r.Require(table3[k].valid && std::abs(o.bias) <= 0.3 && std::abs(o.coverage - 0.95) <= 0.03,
              "b1=%.2f ocbps bias %.3f cov %.3f", kBetas[k], o.bias, o.coverage);
  }
  return r;
}

Result Criterion4(const McSummary& s) {
  Result r;
  const auto& o = s.Get(EstimatorId::kOcbps);
  r.Require(s.valid && std::abs(o.bias) <= 1.0 && o.sd >= 7.0 && o.sd <= 10.0 && o.coverage >= 0.90,
            "ocbps bias %.3f sd %.3f cov %.3f", o.bias, o.sd, o.coverage);
  return r;
}

Result Criterion5(const McSummary& s) {
  Result r;
  const auto& o = s.Get(EstimatorId::kOcbps);
  const auto& c = s.Get(EstimatorId::kCbps);
  r.Require(s.valid && std::abs(o.bias) <= 1.0 && o.rmse <= 1.1 * c.rmse,
            "ocbps bias %.3f rmse %.3f, cbps rmse %.3f", o.bias, o.rmse, c.rmse);
  return r;
}

ObservedSample RandomSample(std::mt19937_64& rng, int n, int d) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd t(n), y(n);
  const double a = 0.8 * (u(rng) - 0.5), b = 0.8 * (u(rng) - 0.5);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = z(rng);
    t[i] = u(rng) < 1.0 / (1.0 + std::exp(-(0.1 + a * x(i, 0) + b * x(i, 1)))) ? 1.0 : 0.0;
    y[i] = 2.0 + x.row(i).sum() + t[i] * (1.0 + x(i, 0)) + z(rng);
  }
  return ObservedSample(std::move(x), std::move(t), std::move(y));
}

Result Criterion6() {
  std::mt19937_64 rng(kSeed);
  std::uniform_int_distribution<int> size(50, 500);
  std::normal_distribution<double> coef(0.0, 10.0);
  std::bernoulli_distribution coin(0.5);
  const int d = 4;
  double worst = 0.0;
  int samples = 0, skipped = 0;
  while (samples < 50) {
    const ObservedSample s = RandomSample(rng, size(rng), d);
    // h1 always holds the constant; each covariate lands in h1, h2 or neither.
    FunctionList h1{CovariateFunction::Constant()}, h2;
    for (int j = 1; j <= d; ++j) {
      if (coin(rng)) {
        h1.push_back(CovariateFunction::Coordinate(j));
      } else if (coin(rng)) {
        h2.push_back(CovariateFunction::Coordinate(j));
      }
    }
    if (h2.empty()) h2.push_back(CovariateFunction::Square(1));
    const BalanceSpec spec(h1, h2);
    AteFit fit = [&] {
      try {
        return FitOcbpsAte(s, spec, spec.Union());
      } catch (const Error&) {
        return AteFit{FitResult{}, PropensityModel({}, Eigen::VectorXd()), {}, 0.0, {}};
      }
    }();
    if (!fit.fit.converged) {
      ++skipped;
      continue;
    }
    ++samples;
    for (int k = 0; k < 10; ++k) {
      OutcomeFits fits;
      fits.alpha1.resize(spec.m1());
      fits.alpha2.resize(spec.m2());
      for (auto& v : fits.alpha1) v = coef(rng);
      for (auto& v : fits.alpha2) v = coef(rng);
      worst = std::max(worst, std::abs(Aipw(s, fit.pi, fits, spec) - fit.estimate));
    }
  }
  Result r;
  r.Require(worst <= 1e-8, "max |aipw - iptw| %.2e over 50 samples x 10 fits (%d nonconverged draws redrawn)",
            worst, skipped);
  return r;
}

Result Criterion7() {
  DgpSpec spec;
  spec.scenario = Scenario::kPsLocal;
  spec.beta1 = 1.0;
  const int draws = 400000;
  const OracleResult opt =
      BiasOracleB(spec, MakeOptimalF(spec, ParseFunctionSpec("x1,x2,x3,x4")), draws, kSeed);
  const OracleResult generic =
      BiasOracleB(spec, BalanceMapFromFunctions(ParseFunctionSpec("1,x1,x2,x3,x4")), draws, kSeed);
  Result r;
  r.Require(std::abs(opt.value) <= 3.0 * opt.std_error, "optimal f: B %.3e, se %.3e", opt.value,
            opt.std_error);
  r.Require(std::abs(generic.value) > 5.0 * generic.std_error, "generic f: B %.4f, se %.4f",
            generic.value, generic.std_error);
  return r;
}

Result Criterion8(const McSummary& s) {
  const auto& o = s.Get(EstimatorId::kOcbps);
  const double mc_var = o.sd * o.sd * kN;
  Result r;
  r.Require(std::abs(mc_var / o.mean_vopt - 1.0) <= 0.15,
            "n * MC var %.1f vs mean vopt plug-in %.1f", mc_var, o.mean_vopt);
  return r;
}

Eigen::MatrixXd FiniteDifferenceJacobian(const MomentSystem& system, const Eigen::VectorXd& beta) {
  Eigen::MatrixXd fd(system.num_moments(), system.num_params());
  for (int k = 0; k < system.num_params(); ++k) {
    const double h = 1e-6 * (1.0 + std::abs(beta[k]));
    Eigen::VectorXd bp = beta, bm = beta;
    bp[k] += h;
    bm[k] -= h;
    fd.col(k) = (system.Moments(bp) - system.Moments(bm)) / (2 * h);
  }
  return fd;
}

Result Criterion9() {
  Result r;
  std::mt19937_64 rng(kSeed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);

  double jac = 0.0;
  const FunctionList basis = ParseFunctionSpec("1,x1,x2");
  const FunctionList f = ParseFunctionSpec("1,x1,x2,x3");
  const BalanceSpec blocks(ParseFunctionSpec("1,x2"), ParseFunctionSpec("x1,x3"));
  for (int draw = 0; draw < 100; ++draw) {
    const ObservedSample s = RandomSample(rng, 80, 3);
    const Link link = draw % 2 ? Link::kProbit : Link::kLogit;
    const MomentSystem systems[] = {
        MomentSystem::Cbps(s, f, basis, link), MomentSystem::Ocbps(s, blocks, basis, link),
        MomentSystem::Att(s, f, basis, link), MomentSystem::Score(s, basis, link)};
    const Eigen::Vector3d beta(u(rng), u(rng), u(rng));
    for (const auto& system : systems) {
      const Eigen::MatrixXd j = system.Jacobian(beta);
      jac = std::max(jac, (j - FiniteDifferenceJacobian(system, beta)).cwiseAbs().maxCoeff() /
                              std::max(j.cwiseAbs().maxCoeff(), 1e-12));
    }
  }
  r.Require(jac <= 1e-6, "jacobian rel err %.1e", jac);

  double resid = 0.0, matching = 0.0, form = 0.0, glm_excess = -INFINITY;
  for (int rep = 0; rep < 100; ++rep) {
    const ObservedSample s = RandomSample(rng, 200 + 3 * rep, 3);
    const BalanceSpec spec(ParseFunctionSpec("1,x2,x3"), ParseFunctionSpec("x1"));
    const MomentSystem system = MomentSystem::Ocbps(s, spec, spec.Union());
    const FitResult fit = Solve(system);
    resid = std::max(resid, fit.residual.lpNorm<Eigen::Infinity>());
    const Eigen::VectorXd pi = system.Probabilities(fit.beta_hat);
    double lhs = 0, rhs = 0;
    for (int i = 0; i < s.n(); ++i) {
      if (s.treated(i)) {
        lhs += (1 - pi[i]) / pi[i] * s.covariates()(i, 0);
      } else {
        rhs += s.covariates()(i, 0);
      }
    }
    matching = std::max(matching, std::abs(lhs - rhs) / s.n());
    const OutcomeFits fits = FitOutcomes(s, spec);
    const double sigma = VarTrue(s, pi).value;
    const double general = sigma - VarOcbps(system, fit.beta_hat, fits).value;
    const double square =
        sigma - VarOcbps(system, fit.beta_hat, fits, OcbpsVarianceForm::kSquare).value;
    form = std::max(form, std::abs(general - square) / std::abs(square));

    const FunctionList map = ParseFunctionSpec("1,x1,x2,x3");
    const PropensityModel mle = FitMle(s, map);
    const BalanceSpec lin(map, map);
    glm_excess = std::max(glm_excess, VarGlm(s, mle, FitOutcomes(s, lin), lin).value -
                                          VarTrue(s, Probabilities(mle, s)).value);
  }
  r.Require(resid <= 1e-10, "just-identified residual %.1e", resid);
  r.Require(matching <= 1e-8, "matching identity / n %.1e", matching);
  r.Require(glm_excess <= 0.0, "max var_glm - var_true %.2e", glm_excess);
  r.Require(form <= 1e-10, "m=q variance forms rel %.1e", form);

  const ObservedSample s = RandomSample(rng, 157, 2);
  const double tbar = s.treatment().mean();
  const FitResult icpt = Solve(MomentSystem::Cbps(s, ParseFunctionSpec("1"), ParseFunctionSpec("1")));
  const double logit_err = std::abs(icpt.beta_hat[0] - std::log(tbar / (1 - tbar)));
  const AttFit att = FitAtt(s, ParseFunctionSpec("1"), ParseFunctionSpec("1"));
  const double odds_err = std::abs(att.pi[0] / (1 - att.pi[0]) -
                                   static_cast<double>(s.num_treated()) / s.num_control());
  r.Require(logit_err <= 1e-10 && odds_err <= 1e-10, "intercept-only logit %.1e, att odds %.1e",
            logit_err, odds_err);

  DgpSpec spec;
  spec.n = 300;
  spec.beta1 = 0.67;
  McOptions opts;
  opts.reps = 40;
  opts.base_seed = kSeed;
  const auto ids = ParseEstimatorList("true,glm,cbps,ocbps,aipw");
  opts.threads = 1;
  const std::string a = FormatCsv(RunMonteCarlo(spec, ids, opts));
  const std::string b = FormatCsv(RunMonteCarlo(spec, ids, opts));
  opts.threads = 4;
  const std::string c = FormatCsv(RunMonteCarlo(spec, ids, opts));
  r.Require(a == b && a == c, "CSV identical across runs and thread counts");
  return r;
}

Result Criterion10(const McSummary& wrong_ps, const McSummary& wrong_outcome) {
  Result r;
  for (const McSummary* s : {&wrong_ps, &wrong_outcome}) {
    const auto& o = s->Get(EstimatorId::kOcbps);
    const double se = o.sd / std::sqrt(static_cast<double>(ok_reps(o)));
    r.Require(std::abs(o.bias) <= 3.0 * se, "%s: bias %.3f, 3 MC se %.3f",
              std::string(ScenarioName(s->spec.scenario)).c_str(), o.bias, 3.0 * se);
  }
  return r;
}

}  // namespace

int main() {
  const std::vector<EstimatorId> ids{EstimatorId::kTrue, EstimatorId::kGlm, EstimatorId::kCbps,
                                     EstimatorId::kOcbps};
  std::vector<McSummary> table1, table3;
  for (double b : kBetas) table1.push_back(Run(Scenario::kBothCorrect, b, ids));
  const McSummary table2 = Run(Scenario::kPsMisspecified, 1.0, ids);
  for (double b : kBetas) table3.push_back(Run(Scenario::kPsLocal, b, ids));
  const McSummary table4 = Run(Scenario::kOutcomeMisspecified, 0.0, ids);
  const McSummary table5 = Run(Scenario::kBothMisspecified, 0.0, ids);

  std::vector<std::pair<const char*, Result>> results;
  results.emplace_back("table 1 both correct", Criterion1(table1));
  results.emplace_back("table 2 propensity misspecified", Criterion2(table2));
  results.emplace_back("table 3 local misspecification", Criterion3(table3));
  results.emplace_back("table 4 outcome misspecified", Criterion4(table4));
  results.emplace_back("table 5 both misspecified", Criterion5(table5));
  results.emplace_back("iptw equals aipw at ocbps fit", Criterion6());
  results.emplace_back("optimal balance removes bias", Criterion7());
  results.emplace_back("efficiency bound", Criterion8(table1[0]));
  results.emplace_back("property suite", Criterion9());
  results.emplace_back("double robustness", Criterion10(table2, table4));

  int failed = 0;
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& [name, res] = results[k];
    std::printf("criterion %2zu %s: %s (%s)\n", k + 1, res.pass ? "PASS" : "FAIL", name,
                res.detail.c_str());
    failed += !res.pass;
  }
  std::printf("%zu/%zu criteria passed\n", results.size() - failed, results.size());
  return failed == 0 ? 0 : 1;
}
