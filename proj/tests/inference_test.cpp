#include <cmath>

#include <gtest/gtest.h>

#include "cbps/errors.hpp"
#include "cbps/inference.hpp"
#include "support.hpp"

namespace cbps {
namespace {

using testing::RandomSample;
using testing::Tiny;

OutcomeFits ZeroFits(const BalanceSpec& spec) {
  OutcomeFits fits;
  fits.alpha1 = Eigen::VectorXd::Zero(spec.m1());
  fits.alpha2 = Eigen::VectorXd::Zero(spec.m2());
  return fits;
}

TEST(VarTrue, HandValues) {
  const ObservedSample s = Tiny({1, 0}, {1, 1}, {0, 0});
  EXPECT_DOUBLE_EQ(VarTrue(s, Eigen::Vector2d(0.5, 0.5)).value, 4.0);
  const ObservedSample zero = Tiny({1, 0}, {0, 0}, {0, 0});
  EXPECT_EQ(VarTrue(zero, Eigen::Vector2d(0.3, 0.6)).value, 0.0);
}

TEST(VarGlm, ZeroOutcomeModelEqualsVarTrue) {
  const ObservedSample s = RandomSample(30, 200);
  const FunctionList basis = ParseFunctionSpec("1,x1,x2");
  const PropensityModel mle = FitMle(s, basis);
  const BalanceSpec spec(basis, basis);
  EXPECT_NEAR(VarGlm(s, mle, ZeroFits(spec), spec).value,
              VarTrue(s, Probabilities(mle, s)).value, 1e-10);
}

TEST(VarGlm, NeverExceedsVarTrue) {
  for (int rep = 0; rep < 100; ++rep) {
    const ObservedSample s = RandomSample(1000 + rep, 100 + 3 * rep);
    const FunctionList basis = ParseFunctionSpec("1,x1,x2,x3");
    const PropensityModel mle = FitMle(s, basis);
    const BalanceSpec spec(basis, basis);
    const OutcomeFits fits = FitOutcomes(s, spec);
    const double glm = VarGlm(s, mle, fits, spec).value;
    const double truth = VarTrue(s, Probabilities(mle, s)).value;
    EXPECT_LE(glm, truth * (1 + 1e-12)) << "rep " << rep;
  }
}

TEST(VarCbps, ZeroOutcomeModelEqualsVarTrue) {
  const ObservedSample s = RandomSample(31, 300);
  const FunctionList f = ParseFunctionSpec("1,x1,x2");
  const MomentSystem system = MomentSystem::Cbps(s, f, f);
  const FitResult fit = Solve(system);
  const BalanceSpec spec(f, f);
  EXPECT_NEAR(VarCbps(system, fit.beta_hat, ZeroFits(spec), spec).value,
              VarTrue(s, system.Probabilities(fit.beta_hat)).value, 1e-10);
}

TEST(VarOcbps, ZeroOutcomeModelEqualsSigmaMu) {
  const ObservedSample s = RandomSample(32, 300);
  const BalanceSpec spec(ParseFunctionSpec("1,x2"), ParseFunctionSpec("x1"));
  const MomentSystem system = MomentSystem::Ocbps(s, spec, spec.Union());
  const FitResult fit = Solve(system);
  EXPECT_NEAR(VarOcbps(system, fit.beta_hat, ZeroFits(spec)).value,
              VarTrue(s, system.Probabilities(fit.beta_hat)).value, 1e-10);
}

TEST(VarOcbps, SquareFormIdentity) {
  for (int rep = 0; rep < 20; ++rep) {
    const ObservedSample s = RandomSample(500 + rep, 300);
    const BalanceSpec spec(ParseFunctionSpec("1,x2,x3"), ParseFunctionSpec("x1"));
    const MomentSystem system = MomentSystem::Ocbps(s, spec, spec.Union());
    const FitResult fit = Solve(system);
    const OutcomeFits fits = FitOutcomes(s, spec);
    const double sigma = VarTrue(s, system.Probabilities(fit.beta_hat)).value;
    const double general =
        sigma - VarOcbps(system, fit.beta_hat, fits, OcbpsVarianceForm::kGeneral).value;
    const double square =
        sigma - VarOcbps(system, fit.beta_hat, fits, OcbpsVarianceForm::kSquare).value;
    EXPECT_NEAR(general, square, 1e-10 * std::abs(square)) << "rep " << rep;
  }
}

TEST(VarVopt, HandValue) {
  const ObservedSample s = Tiny({1, 0}, {1, -1}, {0, 0});
  const BalanceSpec spec(ParseFunctionSpec("1"), ParseFunctionSpec("1"));
  OutcomeFits fits;
  fits.alpha1 = Eigen::VectorXd::Zero(1);
  fits.alpha2 = Eigen::VectorXd::Constant(1, 2.0);  // L equals the IPTW estimate 2
  fits.sigma2_control = fits.sigma2_treated = 1.0;
  EXPECT_NEAR(VarVoptPlugin(s, Eigen::Vector2d(0.5, 0.5), fits, spec).value, 4.0, 1e-14);
}

TEST(VarAtt, HandValueAndZero) {
  const ObservedSample s = Tiny({1, 0}, {5, 2}, {0, 0});
  const BalanceSpec spec(ParseFunctionSpec("1"), ParseFunctionSpec("1"));
  OutcomeFits fits;
  fits.alpha1 = Eigen::VectorXd::Constant(1, 2.0);
  fits.alpha2 = Eigen::VectorXd::Constant(1, 3.0);
  fits.sigma2_control = fits.sigma2_treated = 1.0;
  EXPECT_NEAR(VarAtt(s, Eigen::Vector2d(0.5, 0.5), fits, spec, 3.0).value, 4.0, 1e-14);
  fits.sigma2_control = fits.sigma2_treated = 0.0;
  EXPECT_EQ(VarAtt(s, Eigen::Vector2d(0.5, 0.5), fits, spec, 3.0).value, 0.0);
}

TEST(VarAtt, NonNegativeOnRandomInstances) {
  for (int rep = 0; rep < 20; ++rep) {
    const ObservedSample s = RandomSample(700 + rep, 150);
    const FunctionList f = ParseFunctionSpec("1,x1,x2");
    const BalanceSpec spec(f, f);
    const AttFit fit = FitAtt(s, f, f);
    const VarianceEstimate v =
        VarAtt(s, fit.pi, FitOutcomes(s, spec), spec, fit.estimate.tau);
    EXPECT_GE(v.value, 0.0);
    EXPECT_FALSE(v.floored);
  }
}

TEST(ConfidenceInterval, Values) {
  const Interval a = ConfidenceInterval(0.0, 100.0, 100);
  EXPECT_NEAR(a.low, -1.96, 1e-4);
  EXPECT_NEAR(a.high, 1.96, 1e-4);
  const Interval b = ConfidenceInterval(3.0, 0.0, 50);
  EXPECT_EQ(b.low, 3.0);
  EXPECT_EQ(b.high, 3.0);
  const Interval c = ConfidenceInterval(0.0, 1.0, 1, 0.5);
  EXPECT_NEAR(c.high, 0.6744897501960817, 1e-12);
  EXPECT_THROW(ConfidenceInterval(0.0, -1.0, 10), ValidationError);
  EXPECT_THROW(ConfidenceInterval(0.0, 1.0, 10, 1.0), ValidationError);
}

TEST(SetInterval, FlagsFlooring) {
  EstimateReport r;
  r.n = 10;
  r.point = 1.0;
  SetInterval(&r, VarianceEstimate{0.0, true});
  EXPECT_TRUE(r.variance_floored);
  EXPECT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.ci_low, 1.0);
}

}  // namespace
}  // namespace cbps
