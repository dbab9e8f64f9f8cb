#include "cbps/design.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "cbps/errors.hpp"

namespace cbps {

namespace {

std::string_view Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool ParsePositiveInt(std::string_view s, int* out) {
  if (s.empty()) return false;
  int value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || value < 1) return false;
  *out = value;
  return true;
}

// One factor: x<j> or x<j>^<p>.
bool ParseFactor(std::string_view s, std::vector<int>* exponents) {
  s = Trim(s);
  if (s.size() < 2 || s.front() != 'x') return false;
  s.remove_prefix(1);
  int power = 1;
  if (const auto caret = s.find('^'); caret != std::string_view::npos) {
    if (!ParsePositiveInt(s.substr(caret + 1), &power)) return false;
    s = s.substr(0, caret);
  }
  int index = 0;
  if (!ParsePositiveInt(s, &index)) return false;
  if (static_cast<int>(exponents->size()) < index) exponents->resize(index, 0);
  (*exponents)[index - 1] += power;
  return true;
}

}  // namespace

CovariateFunction::CovariateFunction(std::vector<int> exponents)
    : exponents_(std::move(exponents)) {
  while (!exponents_.empty() && exponents_.back() == 0) exponents_.pop_back();
}

CovariateFunction CovariateFunction::Constant() { return CovariateFunction({}); }

CovariateFunction CovariateFunction::Coordinate(int j) {
  if (j < 1) throw DimensionError("covariate index must be >= 1");
  std::vector<int> e(j, 0);
  e[j - 1] = 1;
  return CovariateFunction(std::move(e));
}

CovariateFunction CovariateFunction::Square(int j) {
  if (j < 1) throw DimensionError("covariate index must be >= 1");
  std::vector<int> e(j, 0);
  e[j - 1] = 2;
  return CovariateFunction(std::move(e));
}

CovariateFunction CovariateFunction::Interaction(int j, int k) {
  if (j < 1 || k < 1) throw DimensionError("covariate index must be >= 1");
  std::vector<int> e(std::max(j, k), 0);
  e[j - 1] += 1;
  e[k - 1] += 1;
  return CovariateFunction(std::move(e));
}

CovariateFunction CovariateFunction::Polynomial(std::vector<int> exponents) {
  for (int e : exponents) {
    if (e < 0) throw ParseError("polynomial exponents must be non-negative");
  }
  return CovariateFunction(std::move(exponents));
}

CovariateFunction::Kind CovariateFunction::kind() const {
  int degree = 0;
  int nonzero = 0;
  int max_power = 0;
  for (int e : exponents_) {
    degree += e;
    if (e > 0) ++nonzero;
    max_power = std::max(max_power, e);
  }
  if (degree == 0) return Kind::kConstant;
  if (degree == 1) return Kind::kCoordinate;
  if (degree == 2 && nonzero == 1) return Kind::kSquare;
  if (degree == 2 && nonzero == 2) return Kind::kInteraction;
  return Kind::kPolynomial;
}

double CovariateFunction::operator()(std::span<const double> x) const {
  if (static_cast<int>(x.size()) < max_index()) {
    throw DimensionError("function " + ToString() + " references covariate " +
                         std::to_string(max_index()) + " but d = " +
                         std::to_string(x.size()));
  }
  double value = 1.0;
  for (std::size_t j = 0; j < exponents_.size(); ++j) {
    for (int p = 0; p < exponents_[j]; ++p) value *= x[j];
  }
  return value;
}

std::string CovariateFunction::ToString() const {
  if (kind() == Kind::kConstant) return "1";
  std::string out;
  for (std::size_t j = 0; j < exponents_.size(); ++j) {
    if (exponents_[j] == 0) continue;
    if (!out.empty()) out += '*';
    out += 'x' + std::to_string(j + 1);
    if (exponents_[j] > 1) out += '^' + std::to_string(exponents_[j]);
  }
  return out;
}

FunctionList ParseFunctionSpec(std::string_view text) {
  FunctionList out;
  if (Trim(text).empty()) return out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view token = Trim(text.substr(start, end - start));
    if (token == "1") {
      out.push_back(CovariateFunction::Constant());
    } else {
      std::vector<int> exponents;
      bool ok = !token.empty();
      std::size_t f = 0;
      while (ok && f <= token.size()) {
        auto star = token.find('*', f);
        if (star == std::string_view::npos) star = token.size();
        ok = ParseFactor(token.substr(f, star - f), &exponents);
        f = star + 1;
      }
      if (!ok) {
        throw ParseError("malformed function token '" + std::string(token) + "'");
      }
      out.push_back(CovariateFunction::Polynomial(std::move(exponents)));
    }
    start = end + 1;
  }
  return out;
}

std::string FormatFunctionSpec(const FunctionList& fns) {
  std::string out;
  for (std::size_t k = 0; k < fns.size(); ++k) {
    if (k > 0) out += ',';
    out += fns[k].ToString();
  }
  return out;
}

void ValidateIndices(const FunctionList& fns, int d) {
  for (const auto& f : fns) {
    if (f.max_index() > d) {
      throw DimensionError("function " + f.ToString() + " references covariate " +
                           std::to_string(f.max_index()) + " but d = " +
                           std::to_string(d));
    }
  }
}

Eigen::VectorXd EvaluateFunctions(const FunctionList& fns, std::span<const double> x) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(fns.size()));
  for (std::size_t k = 0; k < fns.size(); ++k) out[k] = fns[k](x);
  return out;
}

ObservedSample::ObservedSample(Eigen::MatrixXd covariates, Eigen::VectorXd treatment,
                               Eigen::VectorXd outcome)
    : covariates_(std::move(covariates)),
      treatment_(std::move(treatment)),
      outcome_(std::move(outcome)) {
  const auto n = outcome_.size();
  if (treatment_.size() != n || covariates_.rows() != n) {
    throw ValidationError("covariates, treatment and outcome must have the same length");
  }
  if (n < 2) throw ValidationError("need at least two units");
  if (covariates_.cols() < 1) throw ValidationError("need at least one covariate");
  if (!covariates_.allFinite() || !outcome_.allFinite()) {
    throw ValidationError("covariates and outcomes must be finite");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (treatment_[i] == 1.0) {
      ++num_treated_;
    } else if (treatment_[i] != 0.0) {
      throw ValidationError("treatment entries must be exactly 0 or 1");
    }
  }
  if (num_treated_ == 0 || num_treated_ == n) {
    throw ValidationError("need at least one treated and one control unit");
  }
}

std::vector<double> ObservedSample::row(int i) const {
  std::vector<double> x(d());
  for (int j = 0; j < d(); ++j) x[j] = covariates_(i, j);
  return x;
}

Eigen::MatrixXd DesignMatrix(const FunctionList& fns, const Eigen::MatrixXd& covariates) {
  ValidateIndices(fns, static_cast<int>(covariates.cols()));
  const Eigen::Index n = covariates.rows();
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(fns.size()));
  // Same multiplication order as CovariateFunction::operator(), so rows match exactly.
  for (std::size_t k = 0; k < fns.size(); ++k) {
    auto col = out.col(static_cast<Eigen::Index>(k));
    col.setOnes();
    const auto& e = fns[k].exponents();
    for (std::size_t j = 0; j < e.size(); ++j) {
      for (int p = 0; p < e[j]; ++p) {
        col.array() *= covariates.col(static_cast<Eigen::Index>(j)).array();
      }
    }
  }
  return out;
}

Eigen::MatrixXd DesignMatrix(const FunctionList& fns, const ObservedSample& sample) {
  return DesignMatrix(fns, sample.covariates());
}

BalanceSpec::BalanceSpec(FunctionList h1, FunctionList h2)
    : h1_(std::move(h1)), h2_(std::move(h2)) {
  if (h1_.empty() && h2_.empty()) throw ValidationError("h1 and h2 are both empty");
  auto check_unique = [](const FunctionList& block, const char* name) {
    for (std::size_t a = 0; a < block.size(); ++a) {
      for (std::size_t b = a + 1; b < block.size(); ++b) {
        if (block[a] == block[b]) {
          throw ValidationError(std::string("duplicate function ") +
                                block[a].ToString() + " in " + name);
        }
      }
    }
  };
  check_unique(h1_, "h1");
  check_unique(h2_, "h2");
}

FunctionList BalanceSpec::Stacked() const {
  FunctionList out = h1_;
  out.insert(out.end(), h2_.begin(), h2_.end());
  return out;
}

FunctionList BalanceSpec::Union() const {
  FunctionList out = h1_;
  for (const auto& f : h2_) {
    if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
  }
  return out;
}

}  // namespace cbps
