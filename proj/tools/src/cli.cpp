#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cbps/errors.hpp"
#include "cbps/estimators.hpp"
#include "cbps/gmm.hpp"
#include "cbps/propensity.hpp"

namespace cbps::cli {

namespace {

std::string Fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> SplitCommas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= line.size()) {
    auto end = line.find(',', start);
    if (end == std::string_view::npos) end = line.size();
    out.push_back(Trim(line.substr(start, end - start)));
    start = end + 1;
  }
  return out;
}

double ParseNumber(std::string_view s, int line, std::string_view column) {
  double v = 0.0;
  const char* first = s.data();
  if (!s.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line) + ": column '" + std::string(column) +
                     "' has non-numeric or non-finite value '" + std::string(s) + "'");
  }
  return v;
}

std::string LinearSpec(int d) {
  std::string s = "1";
  for (int j = 1; j <= d; ++j) s += ",x" + std::to_string(j);
  return s;
}

FunctionList ParseFlag(const std::string& text, const char* flag, int d) {
  FunctionList fns;
  try {
    fns = ParseFunctionSpec(text);
  } catch (const ParseError& e) {
    throw ParseError(std::string(flag) + ": " + e.what());
  }
  if (fns.empty()) throw ValidationError(std::string(flag) + " must list at least one function");
  try {
    ValidateIndices(fns, d);
  } catch (const DimensionError& e) {
    throw DimensionError(std::string(flag) + ": " + e.what());
  }
  return fns;
}

struct FitArgs {
  std::string data;
  std::string method = "ocbps";
  std::string estimand = "ate";
  std::string h1;
  std::string h2;
  std::string f;
  std::string ps;
  std::string pi_column;
  double level = 0.95;
  std::string weighting = "two-step";
  std::string variance = "vopt";
  std::string out = "text";
};

void AddFitOptions(CLI::App* cmd, FitArgs* a) {
  cmd->add_option("--data", a->data, "CSV file with columns t, y and covariates")->required();
  cmd->add_option("--method", a->method, "Estimator")
      ->check(CLI::IsMember({"true", "glm", "cbps", "ocbps", "ocbps-sieve", "aipw"}));
  cmd->add_option("--estimand", a->estimand, "Target estimand")
      ->check(CLI::IsMember({"ate", "att"}));
  cmd->add_option("--h1", a->h1, "oCBPS first block, e.g. 1,x2,x3,x4");
  cmd->add_option("--h2", a->h2, "oCBPS second block, e.g. x1");
  cmd->add_option("--f", a->f, "CBPS/ATT balance functions (default 1,x1..xd)");
  cmd->add_option("--ps", a->ps, "Propensity covariate map (default depends on method)");
  cmd->add_option("--pi-column", a->pi_column, "Column holding known propensities (method true)");
  cmd->add_option("--level", a->level, "Confidence level")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--weighting", a->weighting, "GMM weighting when over-identified")
      ->check(CLI::IsMember({"identity", "two-step"}));
  cmd->add_option("--variance", a->variance, "oCBPS interval variance")
      ->check(CLI::IsMember({"vopt", "sandwich"}));
}

struct Fitted {
  EstimateReport report;
  Eigen::VectorXd pi;
  FunctionList balance;
  std::vector<std::string> residual_labels;
  Eigen::VectorXd residuals;
  FunctionList h2;           // oCBPS matching identity
  Eigen::VectorXd raw_first;  // glm: first-moment balance residuals of the map
};

std::vector<std::string> Labels(const char* prefix, const FunctionList& fns) {
  std::vector<std::string> out;
  for (const auto& f : fns) out.push_back(std::string(prefix) + ":" + f.ToString());
  return out;
}

void FillFromFit(const FitResult& fit, EstimateReport* r) {
  r->moment_residuals.assign(fit.residual.data(), fit.residual.data() + fit.residual.size());
  r->residual_max = fit.residual.size() ? fit.residual.lpNorm<Eigen::Infinity>() : 0.0;
  r->iterations = fit.iterations;
  r->clip_events = fit.clip_events;
  r->converged = fit.converged;
}

Fitted FitFromArgs(const FitArgs& a, const ObservedSample& sample,
                   const std::optional<Eigen::VectorXd>& known_pi) {
  const int d = sample.d();
  const std::string linear = LinearSpec(d);
  GmmOptions opts;
  opts.weighting = a.weighting == "identity" ? GmmOptions::Weighting::kIdentity
                                             : GmmOptions::Weighting::kTwoStep;
  if (!(a.level > 0.0 && a.level < 1.0)) throw ValidationError("--level must lie in (0, 1)");

  const bool needs_blocks = a.method == "ocbps" || a.method == "ocbps-sieve";
  if (needs_blocks && a.h1.empty()) throw ValidationError("method " + a.method + " requires --h1");
  if (needs_blocks && a.h2.empty()) throw ValidationError("method " + a.method + " requires --h2");
  if (a.method == "true" && !known_pi) {
    throw ValidationError("method true requires --pi-column (or a column named pi)");
  }
  const FunctionList h1 = ParseFlag(a.h1.empty() ? linear : a.h1, "--h1", d);
  const FunctionList h2 = ParseFlag(a.h2.empty() ? linear : a.h2, "--h2", d);
  const BalanceSpec outcome_spec(h1, h2);
  const FunctionList f = ParseFlag(a.f.empty() ? linear : a.f, "--f", d);

  Fitted out;
  EstimateReport& r = out.report;
  r.method = a.method;
  r.n = sample.n();
  r.level = a.level;

  if (a.estimand == "att") {
    r.estimand = Estimand::kAtt;
    const FunctionList ps = ParseFlag(a.ps.empty() ? FormatFunctionSpec(f) : a.ps, "--ps", d);
    if (a.method == "true") {
      out.pi = *known_pi;
    } else if (a.method == "glm") {
      out.pi = FitGlmAte(sample, ps).pi;
    } else if (a.method == "cbps") {
      const AttFit fit = FitAtt(sample, f, ps, opts);
      out.pi = fit.pi;
      FillFromFit(fit.fit, &r);
      out.balance = f;
      out.residual_labels = Labels("f", f);
      out.residuals = fit.fit.residual;
    } else {
      throw ValidationError("estimand att supports methods true, glm and cbps");
    }
    const AttEstimate est = AttFromProbabilities(sample, out.pi);
    r.point = est.tau;
    r.tau1 = est.tau1;
    r.tau0 = est.tau0;
    const OutcomeFits fits = FitOutcomes(sample, outcome_spec);
    SetInterval(&r, VarAtt(sample, out.pi, fits, outcome_spec, est.tau));
    return out;
  }

  r.estimand = Estimand::kAte;
  if (a.method == "true") {
    out.pi = *known_pi;
    r.point = Iptw(sample, out.pi);
    SetInterval(&r, VarTrue(sample, out.pi));
    return out;
  }
  if (a.method == "glm" || a.method == "aipw") {
    const FunctionList ps = ParseFlag(a.ps.empty() ? linear : a.ps, "--ps", d);
    const AteFit fit = FitGlmAte(sample, ps);
    const OutcomeFits fits = FitOutcomes(sample, outcome_spec);
    out.pi = fit.pi;
    FillFromFit(fit.fit, &r);
    out.balance = ps;
    out.residual_labels = Labels("score", ps);
    out.residuals = fit.fit.residual;
    out.raw_first = MomentSystem::Cbps(sample, ps, ps).Moments(fit.fit.beta_hat);
    if (a.method == "glm") {
      r.point = fit.estimate;
      SetInterval(&r, VarGlm(sample, fit.model, fits, outcome_spec));
    } else {
      r.point = Aipw(sample, fit.pi, fits, outcome_spec);
      SetInterval(&r, VarAipw(sample, fit.pi, fits, outcome_spec));
    }
    return out;
  }
  if (a.method == "cbps") {
    const FunctionList ps = ParseFlag(a.ps.empty() ? FormatFunctionSpec(f) : a.ps, "--ps", d);
    const MomentSystem system = MomentSystem::Cbps(sample, f, ps);
    const FitResult fit = Solve(system, opts);
    out.pi = system.Probabilities(fit.beta_hat);
    FillFromFit(fit, &r);
    out.balance = f;
    out.residual_labels = Labels("f", f);
    out.residuals = fit.residual;
    r.point = Iptw(sample, out.pi);
    const OutcomeFits fits = FitOutcomes(sample, outcome_spec);
    SetInterval(&r, VarCbps(system, fit.beta_hat, fits, outcome_spec));
    return out;
  }

  // ocbps and ocbps-sieve
  const FunctionList basis =
      ParseFlag(a.ps.empty() ? FormatFunctionSpec(outcome_spec.Union()) : a.ps, "--ps", d);
  const OutcomeFits fits = FitOutcomes(sample, outcome_spec);
  out.balance = outcome_spec.Union();
  out.h2 = h2;
  out.residual_labels = Labels("h1", h1);
  for (auto& s : Labels("h2", h2)) out.residual_labels.push_back(std::move(s));
  if (a.method == "ocbps-sieve") {
    const AteFit fit = FitOcbpsSieve(sample, outcome_spec, basis, Link::kLogit, opts);
    out.pi = fit.pi;
    FillFromFit(fit.fit, &r);
    out.residuals = fit.fit.residual;
    r.point = fit.estimate;
    r.warnings = fit.warnings;
    SetInterval(&r, VarVoptPlugin(sample, out.pi, fits, outcome_spec));
    return out;
  }
  const MomentSystem system = MomentSystem::Ocbps(sample, outcome_spec, basis);
  const FitResult fit = Solve(system, opts);
  out.pi = system.Probabilities(fit.beta_hat);
  FillFromFit(fit, &r);
  out.residuals = fit.residual;
  r.point = Iptw(sample, out.pi);
  SetInterval(&r, a.variance == "sandwich" ? VarOcbps(system, fit.beta_hat, fits)
                                           : VarVoptPlugin(sample, out.pi, fits, outcome_spec));
  return out;
}

// Maps library errors to exit codes; `body` returns the success code.
template <typename Body>
int Guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const NonConvergenceError& e) {
    err << "error: " << e.what() << '\n';
    err << "diagnostics: best residual max-norm " << Fmt("%.6g", e.residual_norm())
        << ", best iterate [";
    for (Eigen::Index k = 0; k < e.best_iterate().size(); ++k) {
      err << (k ? ", " : "") << Fmt("%.6g", e.best_iterate()[k]);
    }
    err << "]\n";
    return kNonConvergence;
  } catch (const SingularDesignError& e) {
    err << "error: " << e.what() << '\n';
    return kNonConvergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: bad JSON: " << e.what() << '\n';
    return kUsage;
  }
}

struct Loaded {
  CsvDataset data;
  ObservedSample sample;
};

Loaded Load(const FitArgs& a) {
  CsvDataset data = ReadCsvFile(a.data, a.pi_column);
  ObservedSample sample(data.covariates, data.treatment, data.outcome);
  return Loaded{std::move(data), std::move(sample)};
}

int CmdEstimate(const FitArgs& a, std::ostream& out, std::ostream& err) {
  return Guarded(err, [&] {
    const Loaded loaded = Load(a);
    const Fitted fitted = FitFromArgs(a, loaded.sample, loaded.data.pi);
    if (a.out == "json") {
      out << ToJson(fitted.report).dump(2) << '\n';
    } else if (a.out == "csv") {
      out << RenderCsv(fitted.report);
    } else {
      out << RenderText(fitted.report);
    }
    return static_cast<int>(kOk);
  });
}

double Quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * (v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

int CmdDiagnose(const FitArgs& a, std::ostream& out, std::ostream& err) {
  return Guarded(err, [&] {
    const Loaded loaded = Load(a);
    const ObservedSample& sample = loaded.sample;
    const Fitted fitted = FitFromArgs(a, sample, loaded.data.pi);
    char buf[256];
    out << "method " << a.method << "  estimand " << a.estimand << "  n " << sample.n() << '\n';
    if (fitted.residuals.size() > 0) {
      out << "moment residuals\n";
      for (Eigen::Index k = 0; k < fitted.residuals.size(); ++k) {
        std::snprintf(buf, sizeof buf, "  %-16s %14.6e\n", fitted.residual_labels[k].c_str(),
                      fitted.residuals[k]);
        out << buf;
      }
    }
    if (fitted.raw_first.size() > 0) {
      out << "first-moment balance residuals\n";
      for (Eigen::Index k = 0; k < fitted.raw_first.size(); ++k) {
        std::snprintf(buf, sizeof buf, "  %-16s %14.6e\n",
                      fitted.balance[k].ToString().c_str(), fitted.raw_first[k]);
        out << buf;
      }
    }
    const Eigen::VectorXd& pi = fitted.pi;
    const FunctionList fns = fitted.balance.empty() ? ParseFunctionSpec(LinearSpec(sample.d()))
                                                     : fitted.balance;
    const Eigen::MatrixXd h = DesignMatrix(fns, sample);
    out << "weighted means (treated 1/pi, control 1/(1-pi))\n";
    std::snprintf(buf, sizeof buf, "  %-16s %14s %14s %14s\n", "function", "treated", "control",
                  "difference");
    out << buf;
    for (Eigen::Index k = 0; k < h.cols(); ++k) {
      double s1 = 0, w1 = 0, s0 = 0, w0 = 0;
      for (int i = 0; i < sample.n(); ++i) {
        if (sample.treated(i)) {
          s1 += h(i, k) / pi[i];
          w1 += 1.0 / pi[i];
        } else {
          s0 += h(i, k) / (1.0 - pi[i]);
          w0 += 1.0 / (1.0 - pi[i]);
        }
      }
      std::snprintf(buf, sizeof buf, "  %-16s %14.6g %14.6g %14.6e\n", fns[k].ToString().c_str(),
                    s1 / w1, s0 / w0, s1 / w1 - s0 / w0);
      out << buf;
    }
    if (!fitted.h2.empty()) {
      const Eigen::MatrixXd h2 = DesignMatrix(fitted.h2, sample);
      out << "h2 matching: sum_treated (1-pi)/pi h2 vs sum_control h2\n";
      for (Eigen::Index k = 0; k < h2.cols(); ++k) {
        double lhs = 0, rhs = 0;
        for (int i = 0; i < sample.n(); ++i) {
          if (sample.treated(i)) {
            lhs += (1.0 - pi[i]) / pi[i] * h2(i, k);
          } else {
            rhs += h2(i, k);
          }
        }
        std::snprintf(buf, sizeof buf, "  %-16s %14.8g %14.8g %14.6e\n",
                      fitted.h2[k].ToString().c_str(), lhs, rhs, lhs - rhs);
        out << buf;
      }
    }
    std::vector<double> v(pi.data(), pi.data() + pi.size());
    std::snprintf(buf, sizeof buf,
                  "propensity quantiles  min %.4g  p05 %.4g  p25 %.4g  p50 %.4g  p75 %.4g  "
                  "p95 %.4g  max %.4g\n",
                  Quantile(v, 0.0), Quantile(v, 0.05), Quantile(v, 0.25), Quantile(v, 0.5),
                  Quantile(v, 0.75), Quantile(v, 0.95), Quantile(v, 1.0));
    out << buf;
    out << "clip events " << fitted.report.clip_events << '\n';
    return static_cast<int>(kOk);
  });
}

struct SimArgs {
  std::string scenario = "both-correct";
  int n = 1000;
  double beta1 = 0.0;
  int reps = 500;
  std::uint64_t seed = 1;
  std::string estimators = "true,glm,cbps,ocbps";
  std::string out;
  int threads = 0;
  double xi = 0.0;
  double delta = 0.0;
  std::string u;
  std::string r1;
  std::string r2;
  double truncation = 0.95;
  double x1_sd = 1.4142135623730951;
  std::string ocbps_ci = "vopt";
};

void AddDgpOptions(CLI::App* cmd, SimArgs* a) {
  cmd->add_option("--scenario", a->scenario,
                  "both-correct | ps-misspecified | ps-local | outcome-misspecified | "
                  "both-misspecified | custom, or a JSON config file");
  cmd->add_option("--n", a->n, "Sample size");
  cmd->add_option("--beta1", a->beta1, "Coefficient of x1 in the propensity model");
  cmd->add_option("--seed", a->seed, "Base seed");
  cmd->add_option("--xi", a->xi, "Tilt magnitude (default n^-1/2)");
  cmd->add_option("--delta", a->delta, "Outcome misspecification magnitude (custom)");
  cmd->add_option("--u", a->u, "Tilt direction (default x1^2)");
  cmd->add_option("--r1", a->r1, "Outcome misspecification directions for E[Y(0)|X]");
  cmd->add_option("--r2", a->r2, "Outcome misspecification directions for the effect");
  cmd->add_option("--truncation", a->truncation, "Cap on tilted propensities");
  cmd->add_option("--x1-sd", a->x1_sd, "Standard deviation of x1 (default sqrt(2))");
}

bool LooksLikeFile(const std::string& s) {
  return s.size() > 5 && s.compare(s.size() - 5, 5, ".json") == 0;
}

// Builds the DGP from an optional JSON config, then explicit flags.
DgpSpec BuildSpec(const CLI::App& cmd, SimArgs* a) {
  DgpSpec spec;
  if (LooksLikeFile(a->scenario)) {
    std::ifstream in(a->scenario);
    if (!in) throw ValidationError("cannot open config '" + a->scenario + "'");
    const nlohmann::json j = nlohmann::json::parse(in);
    ApplySpecJson(j, &spec);
    if (j.contains("reps") && cmd.count("--reps") == 0) a->reps = j.at("reps").get<int>();
    if (j.contains("seed") && cmd.count("--seed") == 0) a->seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("estimators") && cmd.count("--estimators") == 0) {
      a->estimators = j.at("estimators").get<std::string>();
    }
    if (j.contains("ocbps_ci") && cmd.count("--ocbps-ci") == 0) {
      a->ocbps_ci = j.at("ocbps_ci").get<std::string>();
    }
  } else {
    spec.scenario = ParseScenario(a->scenario);
  }
  if (cmd.count("--n")) spec.n = a->n;
  if (cmd.count("--beta1")) spec.beta1 = a->beta1;
  if (cmd.count("--xi")) spec.xi = a->xi;
  if (cmd.count("--delta")) spec.delta = a->delta;
  if (cmd.count("--u")) {
    const FunctionList u = ParseFunctionSpec(a->u);
    if (u.size() != 1) throw ValidationError("--u must be a single function");
    spec.u = u.front();
  }
  if (cmd.count("--r1")) spec.r1 = ParseFunctionSpec(a->r1);
  if (cmd.count("--r2")) spec.r2 = ParseFunctionSpec(a->r2);
  if (cmd.count("--truncation")) spec.truncation = a->truncation;
  if (cmd.count("--x1-sd")) spec.x1_sd = a->x1_sd;
  spec.Validate();
  return spec;
}

int CmdSimulate(const CLI::App& cmd, SimArgs a, std::ostream& out, std::ostream& err) {
  return Guarded(err, [&] {
    const DgpSpec spec = BuildSpec(cmd, &a);
    if (a.reps < 1) throw ValidationError("--reps must be >= 1");
    if (a.ocbps_ci != "vopt" && a.ocbps_ci != "sandwich") {
      throw ValidationError("--ocbps-ci must be vopt or sandwich");
    }
    McOptions opts;
    opts.reps = a.reps;
    opts.base_seed = a.seed;
    opts.threads = a.threads;
    opts.ocbps_ci = a.ocbps_ci == "sandwich" ? OcbpsCi::kSandwich : OcbpsCi::kVopt;
    const McSummary summary = RunMonteCarlo(spec, ParseEstimatorList(a.estimators), opts);
    out << FormatTable(summary);
    if (!a.out.empty()) {
      std::ofstream file(a.out, std::ios::binary);
      if (!file) throw ValidationError("cannot write '" + a.out + "'");
      file << FormatCsv(summary);
    }
    return static_cast<int>(summary.valid ? kOk : kInvalidSummary);
  });
}

int CmdGenerate(const CLI::App& cmd, SimArgs a, std::ostream& out, std::ostream& err) {
  return Guarded(err, [&] {
    const DgpSpec spec = BuildSpec(cmd, &a);
    const Replication rep = DrawReplication(spec, a.seed);
    if (a.out.empty()) {
      WriteReplicationCsv(out, rep);
    } else {
      std::ofstream file(a.out, std::ios::binary);
      if (!file) throw ValidationError("cannot write '" + a.out + "'");
      WriteReplicationCsv(file, rep);
    }
    return static_cast<int>(kOk);
  });
}

const char* EstimandName(Estimand e) { return e == Estimand::kAtt ? "att" : "ate"; }

}  // namespace

CsvDataset ReadCsv(std::istream& in, std::string_view pi_column) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV input");
  const std::vector<std::string_view> header_views = SplitCommas(line);
  std::vector<std::string> header(header_views.begin(), header_views.end());
  const bool pi_required = !pi_column.empty();
  if (!pi_required) pi_column = "pi";
  int t_col = -1, y_col = -1, pi_col = -1;
  std::vector<int> x_cols;
  CsvDataset data;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (header[c] == "t") {
      t_col = c;
    } else if (header[c] == "y") {
      y_col = c;
    } else if (header[c] == pi_column) {
      pi_col = c;
    } else {
      x_cols.push_back(c);
      data.covariate_names.push_back(header[c]);
    }
  }
  if (t_col < 0) throw ValidationError("CSV is missing the required column 't'");
  if (y_col < 0) throw ValidationError("CSV is missing the required column 'y'");
  if (pi_required && pi_col < 0) {
    throw ValidationError("CSV has no column named '" + std::string(pi_column) + "'");
  }
  if (x_cols.empty()) throw ValidationError("CSV has no covariate columns");

  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    const auto cells = SplitCommas(line);
    if (cells.size() != header.size()) {
      throw ParseError("line " + std::to_string(line_no) + " has " +
                       std::to_string(cells.size()) + " fields, expected " +
                       std::to_string(header.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      row[c] = ParseNumber(cells[c], line_no, header[c]);
    }
    if (row[t_col] != 0.0 && row[t_col] != 1.0) {
      throw ValidationError("line " + std::to_string(line_no) + ": t must be 0 or 1");
    }
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  data.covariates.resize(n, static_cast<Eigen::Index>(x_cols.size()));
  data.treatment.resize(n);
  data.outcome.resize(n);
  if (pi_col >= 0) data.pi = Eigen::VectorXd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    data.treatment[i] = rows[i][t_col];
    data.outcome[i] = rows[i][y_col];
    for (std::size_t j = 0; j < x_cols.size(); ++j) data.covariates(i, j) = rows[i][x_cols[j]];
    if (pi_col >= 0) {
      const double p = rows[i][pi_col];
      if (!(p > 0.0 && p < 1.0)) {
        throw ValidationError("propensity column values must lie strictly inside (0, 1)");
      }
      (*data.pi)[i] = p;
    }
  }
  return data;
}

CsvDataset ReadCsvFile(const std::string& path, std::string_view pi_column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open data file '" + path + "'");
  return ReadCsv(in, pi_column);
}

void WriteReplicationCsv(std::ostream& out, const Replication& rep) {
  const ObservedSample& s = rep.sample;
  out << "t,y";
  for (int j = 1; j <= s.d(); ++j) out << ",x" << j;
  out << ",pi\n";
  for (int i = 0; i < s.n(); ++i) {
    out << (s.treated(i) ? '1' : '0') << ',' << Fmt("%.17g", s.outcome()[i]);
    for (int j = 0; j < s.d(); ++j) out << ',' << Fmt("%.17g", s.covariates()(i, j));
    out << ',' << Fmt("%.17g", rep.true_pi[i]) << '\n';
  }
}

nlohmann::json ToJson(const EstimateReport& r) {
  return nlohmann::json{
      {"estimand", EstimandName(r.estimand)},
      {"method", r.method},
      {"n", r.n},
      {"point", r.point},
      {"variance", r.variance},
      {"std_error", r.std_error},
      {"level", r.level},
      {"ci_low", r.ci_low},
      {"ci_high", r.ci_high},
      {"tau1", r.tau1},
      {"tau0", r.tau0},
      {"moment_residuals", r.moment_residuals},
      {"residual_max", r.residual_max},
      {"iterations", r.iterations},
      {"clip_events", r.clip_events},
      {"converged", r.converged},
      {"variance_floored", r.variance_floored},
      {"warnings", r.warnings},
  };
}

EstimateReport ReportFromJson(const nlohmann::json& j) {
  EstimateReport r;
  const std::string estimand = j.at("estimand").get<std::string>();
  if (estimand != "ate" && estimand != "att") throw ParseError("unknown estimand '" + estimand + "'");
  r.estimand = estimand == "att" ? Estimand::kAtt : Estimand::kAte;
  j.at("method").get_to(r.method);
  j.at("n").get_to(r.n);
  j.at("point").get_to(r.point);
  j.at("variance").get_to(r.variance);
  j.at("std_error").get_to(r.std_error);
  j.at("level").get_to(r.level);
  j.at("ci_low").get_to(r.ci_low);
  j.at("ci_high").get_to(r.ci_high);
  j.at("tau1").get_to(r.tau1);
  j.at("tau0").get_to(r.tau0);
  j.at("moment_residuals").get_to(r.moment_residuals);
  j.at("residual_max").get_to(r.residual_max);
  j.at("iterations").get_to(r.iterations);
  j.at("clip_events").get_to(r.clip_events);
  j.at("converged").get_to(r.converged);
  j.at("variance_floored").get_to(r.variance_floored);
  j.at("warnings").get_to(r.warnings);
  return r;
}

void ApplySpecJson(const nlohmann::json& j, DgpSpec* spec) {
  if (!j.is_object()) throw ParseError("scenario config must be a JSON object");
  if (j.contains("scenario")) spec->scenario = ParseScenario(j.at("scenario").get<std::string>());
  if (j.contains("n")) spec->n = j.at("n").get<int>();
  if (j.contains("beta1")) spec->beta1 = j.at("beta1").get<double>();
  if (j.contains("xi") && !j.at("xi").is_null()) spec->xi = j.at("xi").get<double>();
  if (j.contains("u")) {
    const FunctionList u = ParseFunctionSpec(j.at("u").get<std::string>());
    if (u.size() != 1) throw ValidationError("config key 'u' must be a single function");
    spec->u = u.front();
  }
  if (j.contains("delta")) spec->delta = j.at("delta").get<double>();
  if (j.contains("r1")) spec->r1 = ParseFunctionSpec(j.at("r1").get<std::string>());
  if (j.contains("r2")) spec->r2 = ParseFunctionSpec(j.at("r2").get<std::string>());
  if (j.contains("truncation")) spec->truncation = j.at("truncation").get<double>();
  if (j.contains("x1_sd")) spec->x1_sd = j.at("x1_sd").get<double>();
}

std::string RenderText(const EstimateReport& r) {
  std::string s;
  char buf[256];
  auto line = [&](const char* key, const std::string& value) {
    std::snprintf(buf, sizeof buf, "%-13s %s\n", key, value.c_str());
    s += buf;
  };
  line("method", r.method);
  line("estimand", EstimandName(r.estimand));
  line("n", std::to_string(r.n));
  line("estimate", Fmt("%.6f", r.point));
  if (r.estimand == Estimand::kAtt) {
    line("tau1", Fmt("%.6f", r.tau1));
    line("tau0", Fmt("%.6f", r.tau0));
  }
  line("std_error", Fmt("%.6f", r.std_error));
  line("variance", Fmt("%.6g", r.variance));
  std::snprintf(buf, sizeof buf, "%-13s [%.6f, %.6f]\n",
                ("ci_" + Fmt("%g", 100.0 * r.level)).c_str(), r.ci_low, r.ci_high);
  s += buf;
  line("residual_max", Fmt("%.3e", r.residual_max));
  line("iterations", std::to_string(r.iterations));
  line("clip_events", std::to_string(r.clip_events));
  for (const auto& w : r.warnings) s += "warning: " + w + '\n';
  return s;
}

std::string RenderCsv(const EstimateReport& r) {
  std::string s = "method,estimand,n,estimate,std_error,ci_low,ci_high,residual_max,iterations\n";
  s += r.method + ',' + EstimandName(r.estimand) + ',' + std::to_string(r.n) + ',' +
       Fmt("%.6g", r.point) + ',' + Fmt("%.6g", r.std_error) + ',' + Fmt("%.6g", r.ci_low) + ',' +
       Fmt("%.6g", r.ci_high) + ',' + Fmt("%.6g", r.residual_max) + ',' +
       std::to_string(r.iterations) + '\n';
  return s;
}

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Covariate balancing propensity score estimation"};
  app.name(args.empty() ? "cbps" : args.front());
  app.require_subcommand(1);

  FitArgs est;
  auto* estimate = app.add_subcommand("estimate", "Estimate a treatment effect from CSV data");
  AddFitOptions(estimate, &est);
  estimate->add_option("--out", est.out, "Output format")
      ->check(CLI::IsMember({"text", "json", "csv"}));

  FitArgs diag;
  auto* diagnose = app.add_subcommand("diagnose", "Balance diagnostics for a fitted model");
  AddFitOptions(diagnose, &diag);

  SimArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo scenario");
  AddDgpOptions(simulate, &sim);
  simulate->add_option("--reps", sim.reps, "Replications");
  simulate->add_option("--estimators", sim.estimators,
                       "Comma list of true, glm, cbps, ocbps, aipw, ocbps-sieve");
  simulate->add_option("--out", sim.out, "CSV summary path");
  simulate->add_option("--threads", sim.threads, "Worker threads (0 = all cores)");
  simulate->add_option("--ocbps-ci", sim.ocbps_ci, "oCBPS interval variance: vopt or sandwich");

  SimArgs gen;
  auto* generate = app.add_subcommand("generate", "Write one simulated data set as CSV");
  AddDgpOptions(generate, &gen);
  generate->add_option("--out", gen.out, "CSV path (default stdout)");

  std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  if (*estimate) return CmdEstimate(est, out, err);
  if (*diagnose) return CmdDiagnose(diag, out, err);
  if (*simulate) return CmdSimulate(*simulate, sim, out, err);
  return CmdGenerate(*generate, gen, out, err);
}

}  // namespace cbps::cli
