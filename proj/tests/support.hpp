#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Core>

#include "cbps/design.hpp"

namespace cbps::testing {

// Covariates N(0,1), logistic treatment in x1 and x2, linear outcome with a
// heterogeneous effect in x2.
inline ObservedSample RandomSample(std::uint64_t seed, int n, int d = 3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd t(n), y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = normal(rng);
    const double eta = 0.2 + 0.5 * x(i, 0) - 0.3 * (d > 1 ? x(i, 1) : 0.0);
    t[i] = unif(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
    y[i] = 1.0 + x(i, 0) + t[i] * (2.0 + (d > 1 ? x(i, 1) : 0.0)) + normal(rng);
  }
  return ObservedSample(std::move(x), std::move(t), std::move(y));
}

inline ObservedSample Tiny(std::initializer_list<double> t, std::initializer_list<double> y,
                           std::initializer_list<double> x1) {
  const auto n = static_cast<Eigen::Index>(t.size());
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd tv(n), yv(n);
  Eigen::Index i = 0;
  for (double v : x1) x(i++, 0) = v;
  i = 0;
  for (double v : t) tv[i++] = v;
  i = 0;
  for (double v : y) yv[i++] = v;
  return ObservedSample(std::move(x), std::move(tv), std::move(yv));
}

inline double Logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace cbps::testing
