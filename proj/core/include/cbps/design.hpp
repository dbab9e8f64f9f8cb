#pragma once

// Observed data and the covariate-function mini-language used to describe
// balance conditions, propensity bases and outcome bases.
//
// Grammar (comma separated, covariates 1-based):
//   1            constant one
//   x2           coordinate
//   x1^2         square
//   x1*x3        pairwise interaction
//   x1^3*x2      any other monomial (custom polynomial)

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace cbps {

// A monomial in the covariates, stored as one exponent per coordinate.
// Every function has a unique canonical representation, so `x1*x1` and
// `x1^2` compare equal.
class CovariateFunction {
 public:
  enum class Kind { kConstant, kCoordinate, kSquare, kInteraction, kPolynomial };

  static CovariateFunction Constant();
  static CovariateFunction Coordinate(int j);
  static CovariateFunction Square(int j);
  static CovariateFunction Interaction(int j, int k);
  // exponents[j-1] is the power of covariate j. Trailing zeros are dropped.
  static CovariateFunction Polynomial(std::vector<int> exponents);

  Kind kind() const;
  const std::vector<int>& exponents() const { return exponents_; }
  // Largest covariate index referenced (0 for the constant).
  int max_index() const { return static_cast<int>(exponents_.size()); }

  // Throws DimensionError when x has fewer than max_index() entries.
  double operator()(std::span<const double> x) const;

  std::string ToString() const;

  bool operator==(const CovariateFunction&) const = default;

 private:
  explicit CovariateFunction(std::vector<int> exponents);

  std::vector<int> exponents_;
};

using FunctionList = std::vector<CovariateFunction>;

// Parses a comma-separated spec. Index bounds are not checked here.
FunctionList ParseFunctionSpec(std::string_view text);
std::string FormatFunctionSpec(const FunctionList& fns);

// Throws DimensionError if any function references a covariate beyond d.
void ValidateIndices(const FunctionList& fns, int d);

Eigen::VectorXd EvaluateFunctions(const FunctionList& fns, std::span<const double> x);

// (n, d) covariates with treatment in {0, 1} and a real outcome.
class ObservedSample {
 public:
  ObservedSample(Eigen::MatrixXd covariates, Eigen::VectorXd treatment,
                 Eigen::VectorXd outcome);

  int n() const { return static_cast<int>(outcome_.size()); }
  int d() const { return static_cast<int>(covariates_.cols()); }
  int num_treated() const { return num_treated_; }
  int num_control() const { return n() - num_treated_; }

  const Eigen::MatrixXd& covariates() const { return covariates_; }
  const Eigen::VectorXd& treatment() const { return treatment_; }
  const Eigen::VectorXd& outcome() const { return outcome_; }

  bool treated(int i) const { return treatment_[i] == 1.0; }
  // Covariate row i as a contiguous vector.
  std::vector<double> row(int i) const;

 private:
  Eigen::MatrixXd covariates_;
  Eigen::VectorXd treatment_;
  Eigen::VectorXd outcome_;
  int num_treated_ = 0;
};

// n x |fns| matrix whose row i is EvaluateFunctions(fns, X_i), bit for bit.
Eigen::MatrixXd DesignMatrix(const FunctionList& fns, const Eigen::MatrixXd& covariates);
Eigen::MatrixXd DesignMatrix(const FunctionList& fns, const ObservedSample& sample);

// The two oCBPS blocks: h1 is balanced between arms, h2 matches weighted
// treated units to unweighted controls. An empty h2 is plain CBPS with f = h1.
// Either block may be empty, not both.
class BalanceSpec {
 public:
  BalanceSpec(FunctionList h1, FunctionList h2);

  const FunctionList& h1() const { return h1_; }
  const FunctionList& h2() const { return h2_; }
  int m1() const { return static_cast<int>(h1_.size()); }
  int m2() const { return static_cast<int>(h2_.size()); }
  int m() const { return m1() + m2(); }

  // h1 followed by h2.
  FunctionList Stacked() const;
  // h1 followed by the members of h2 not already in h1.
  FunctionList Union() const;

 private:
  FunctionList h1_;
  FunctionList h2_;
};

}  // namespace cbps
