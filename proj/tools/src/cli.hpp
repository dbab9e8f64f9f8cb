#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "cbps/design.hpp"
#include "cbps/inference.hpp"
#include "cbps/simulation.hpp"

namespace cbps::cli {

enum ExitCode {
  kOk = 0,
  kUsage = 2,          // parse or validation error
  kNonConvergence = 3,
  kInvalidSummary = 4,  // more than 5% failed replications
};

// Columns `t` and `y` are required; every other column except the
// propensity column is a covariate, in file order. The propensity column is
// `pi_column` when given (and then required), otherwise `pi` if present.
struct CsvDataset {
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;
  Eigen::VectorXd treatment;
  Eigen::VectorXd outcome;
  std::optional<Eigen::VectorXd> pi;
};

CsvDataset ReadCsv(std::istream& in, std::string_view pi_column = {});
CsvDataset ReadCsvFile(const std::string& path, std::string_view pi_column = {});

void WriteReplicationCsv(std::ostream& out, const Replication& rep);

nlohmann::json ToJson(const EstimateReport& report);
EstimateReport ReportFromJson(const nlohmann::json& j);

// Fields missing from `j` keep the values already in `spec`.
void ApplySpecJson(const nlohmann::json& j, DgpSpec* spec);

std::string RenderText(const EstimateReport& report);
std::string RenderCsv(const EstimateReport& report);

// Entry point shared by the executable and the tests.
int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cbps::cli
