#include <benchmark/benchmark.h>

#include "cbps/estimators.hpp"
#include "cbps/gmm.hpp"
#include "cbps/simulation.hpp"

namespace {

using namespace cbps;

Replication Draw(Scenario scenario, int n) {
  DgpSpec spec;
  spec.scenario = scenario;
  spec.n = n;
  spec.beta1 = 0.67;
  return DrawReplication(spec, 11);
}

void BM_SolveOcbps(benchmark::State& state) {
  const Replication rep = Draw(Scenario::kBothCorrect, static_cast<int>(state.range(0)));
  const BalanceSpec spec(ParseFunctionSpec("1,x2,x3,x4"), ParseFunctionSpec("x1"));
  const MomentSystem system = MomentSystem::Ocbps(rep.sample, spec, WorkingBasis());
  for (auto _ : state) benchmark::DoNotOptimize(Solve(system).beta_hat);
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SolveOcbps)->Arg(250)->Arg(1000)->Arg(4000)->Arg(16000)->Complexity();

void BM_SolveCbpsTwoStep(benchmark::State& state) {
  const Replication rep = Draw(Scenario::kBothCorrect, static_cast<int>(state.range(0)));
  const MomentSystem system = MomentSystem::Cbps(
      rep.sample, ParseFunctionSpec("1,x1,x2,x3,x4,x1^2,x2^2"), WorkingBasis());
  for (auto _ : state) benchmark::DoNotOptimize(Solve(system).beta_hat);
}
BENCHMARK(BM_SolveCbpsTwoStep)->Arg(1000)->Arg(4000);

void BM_FitMle(benchmark::State& state) {
  const Replication rep = Draw(Scenario::kBothCorrect, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(FitMle(rep.sample, WorkingBasis()).coefficients());
}
BENCHMARK(BM_FitMle)->Arg(1000)->Arg(4000);

void BM_Jacobian(benchmark::State& state) {
  const Replication rep = Draw(Scenario::kBothCorrect, 1000);
  const BalanceSpec spec(ParseFunctionSpec("1,x2,x3,x4"), ParseFunctionSpec("x1"));
  const MomentSystem system = MomentSystem::Ocbps(rep.sample, spec, WorkingBasis());
  const Eigen::VectorXd beta = Eigen::VectorXd::Constant(5, 0.05);
  for (auto _ : state) benchmark::DoNotOptimize(system.Jacobian(beta));
}
BENCHMARK(BM_Jacobian);

void BM_Replication(benchmark::State& state) {
  DgpSpec spec;
  spec.n = 1000;
  McOptions opts;
  opts.reps = 1;
  opts.threads = 1;
  const auto ids = ParseEstimatorList("true,glm,cbps,ocbps");
  std::uint64_t seed = 1;
  for (auto _ : state) {
    opts.base_seed = seed++;
    benchmark::DoNotOptimize(RunMonteCarlo(spec, ids, opts).true_ate);
  }
}
BENCHMARK(BM_Replication)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
