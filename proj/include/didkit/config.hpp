#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "didkit/csdid.hpp"
#include "didkit/dgp.hpp"
#include "didkit/twfe.hpp"
#include "didkit/variance.hpp"

namespace didkit {

struct DataPaths {
  std::filesystem::path panel;
  std::filesystem::path micro;
  std::filesystem::path parishes;
  std::filesystem::path sites;
  std::filesystem::path anchors;
};

/// Units whose treatment year lies in [min_year, max_year]; `never` selects
/// never-treated units instead.
struct CohortGroup {
  std::string label;
  std::optional<int> min_year;
  std::optional<int> max_year;
  bool never = false;
};

struct DiagnosticsConfig {
  std::vector<std::string> variables;
  std::optional<int> base_period;  // default: first panel period
  int grid_size = 512;
  std::vector<CohortGroup> groups;
};

enum class CrossModel { ols, poisson };

/// Unit-level regression at one period, optionally aggregated to a label
/// (outcome summed, regressors averaged within each group).
struct CrossSectionConfig {
  std::string outcome;
  std::vector<std::string> regressors;
  CrossModel model = CrossModel::ols;
  std::optional<int> period;  // default: first panel period
  std::string aggregate_by;   // empty = unit level
  std::vector<VcovSpec> vcov;
};

struct SimulateConfig {
  DgpConfig dgp;
  int reps = 200;
  std::vector<std::string> estimators{"cs", "twfe"};
  std::vector<std::string> covariates;
};

struct Config {
  std::filesystem::path base_dir;  // relative data paths resolve here
  DataPaths data;
  std::vector<std::string> outcomes;
  ControlSpec controls;
  std::vector<std::string> covariates;  // group-time estimator
  std::vector<std::string> estimators{"twfe", "cs"};
  std::vector<VcovSpec> vcov{VcovSpec::cluster("unit")};
  BootstrapOptions bootstrap;
  SimulateConfig simulate;
  DiagnosticsConfig diagnostics;
  std::vector<CrossSectionConfig> cross_sections;
  double floor_km = 1.0;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  // Overrides every seed in the config.
  void set_seed(std::uint64_t seed);
};

/// "hc1", "cluster:LABEL", "conley:CUTOFF[km][:uniform|bartlett]".
VcovSpec parse_vcov(const std::string& text);

/// JSON config. Unknown keys are rejected. Throws CONFIG_ERROR.
Config parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
Config load_config(const std::filesystem::path& path);

}  // namespace didkit
