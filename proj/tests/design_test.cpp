#include <gtest/gtest.h>

#include "cbps/design.hpp"
#include "cbps/errors.hpp"

namespace cbps {
namespace {

TEST(FunctionSpec, ParsesGrammar) {
  const FunctionList fns = ParseFunctionSpec("x1*x3,x2");
  ASSERT_EQ(fns.size(), 2u);
  EXPECT_EQ(fns[0], CovariateFunction::Interaction(1, 3));
  EXPECT_EQ(fns[1], CovariateFunction::Coordinate(2));
  EXPECT_EQ(ParseFunctionSpec("1, x1^2")[1], CovariateFunction::Square(1));
  EXPECT_EQ(ParseFunctionSpec("x1*x1")[0], CovariateFunction::Square(1));
  EXPECT_EQ(ParseFunctionSpec("x1^3*x2")[0], CovariateFunction::Polynomial({3, 1}));
}

TEST(FunctionSpec, RoundTrips) {
  const std::string text = "1,x1,x2^2,x1*x3,x1^3*x2";
  EXPECT_EQ(ParseFunctionSpec(FormatFunctionSpec(ParseFunctionSpec(text))),
            ParseFunctionSpec(text));
}

TEST(FunctionSpec, RejectsGarbage) {
  EXPECT_THROW(ParseFunctionSpec("x0"), Error);
  EXPECT_THROW(ParseFunctionSpec("y1"), ParseError);
  EXPECT_THROW(ParseFunctionSpec("x1,,x2"), ParseError);
  EXPECT_THROW(ParseFunctionSpec("x1^"), ParseError);
}

TEST(Evaluate, HandValues) {
  const std::vector<double> x{3, 2, 5};
  const Eigen::VectorXd v = EvaluateFunctions(ParseFunctionSpec("1,x2"), x);
  EXPECT_EQ(v[0], 1.0);
  EXPECT_EQ(v[1], 2.0);
  const std::vector<double> x2{-2, 7};
  EXPECT_EQ(EvaluateFunctions({CovariateFunction::Square(1)}, x2)[0], 4.0);
  const std::vector<double> x3{2, 0, 5};
  EXPECT_EQ(EvaluateFunctions({CovariateFunction::Interaction(1, 3)}, x3)[0], 10.0);
}

TEST(Evaluate, IndexBeyondDimension) {
  const std::vector<double> x{1, 2};
  EXPECT_THROW(EvaluateFunctions(ParseFunctionSpec("x3"), x), DimensionError);
  EXPECT_THROW(ValidateIndices(ParseFunctionSpec("x1,x3"), 2), DimensionError);
}

TEST(DesignMatrix, HandValues) {
  Eigen::MatrixXd x(3, 1);
  x << 1, 2, 3;
  const Eigen::MatrixXd ones = DesignMatrix(ParseFunctionSpec("1"), x);
  EXPECT_TRUE(ones.isApprox(Eigen::MatrixXd::Ones(3, 1)));
  Eigen::MatrixXd x23(2, 1);
  x23 << 2, 3;
  const Eigen::MatrixXd m = DesignMatrix(ParseFunctionSpec("x1,x1^2"), x23);
  EXPECT_EQ(m(0, 0), 2.0);
  EXPECT_EQ(m(0, 1), 4.0);
  EXPECT_EQ(m(1, 0), 3.0);
  EXPECT_EQ(m(1, 1), 9.0);
}

TEST(DesignMatrix, RowsMatchEvaluate) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(20, 3);
  const FunctionList fns = ParseFunctionSpec("1,x1,x2^2,x1*x3");
  const Eigen::MatrixXd m = DesignMatrix(fns, x);
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> row{x(i, 0), x(i, 1), x(i, 2)};
    EXPECT_EQ(m.row(i).transpose(), EvaluateFunctions(fns, row));
  }
}

TEST(ObservedSample, Validates) {
  Eigen::MatrixXd x(2, 1);
  x << 0, 1;
  EXPECT_THROW(ObservedSample(x, Eigen::Vector2d(1, 0.5), Eigen::Vector2d(1, 1)), ValidationError);
  EXPECT_THROW(ObservedSample(x, Eigen::Vector3d(1, 0, 1), Eigen::Vector2d(1, 1)), ValidationError);
  const ObservedSample s(x, Eigen::Vector2d(1, 0), Eigen::Vector2d(3, 1));
  EXPECT_EQ(s.num_treated(), 1);
  EXPECT_EQ(s.num_control(), 1);
}

TEST(BalanceSpec, UnionDropsDuplicates) {
  const BalanceSpec spec(ParseFunctionSpec("1,x1"), ParseFunctionSpec("x1,x2"));
  EXPECT_EQ(spec.m(), 4);
  EXPECT_EQ(spec.Stacked().size(), 4u);
  EXPECT_EQ(spec.Union(), ParseFunctionSpec("1,x1,x2"));
}

}  // namespace
}  // namespace cbps
