#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "didkit/panel.hpp"

namespace didkit {

using EffectFn = std::function<double(int g, int t)>;

EffectFn constant_effect(double tau);
/// tau(g, t) = intercept + slope_per_year * (t - g).
EffectFn event_linear_effect(double intercept, double slope_per_year);

/// Synthetic staggered-adoption design:
///   Y_it = a_i + l_t + tau(g_i, t) 1[t >= g_i] + trend * x_i * k(t) + e_it
/// where k(t) is the period index. Cohorts are assigned by thresholding a
/// latent index that loads on a_i (selection_on_level) and x_i
/// (selection_on_covariate), so marginal cohort shares match the config.
struct DgpConfig {
  long n_units = 500;
  std::vector<int> periods{1850, 1860, 1880, 1901};
  // nullopt key = never treated.
  std::vector<std::pair<std::optional<int>, double>> cohort_shares{
      {1860, 0.2}, {1880, 0.2}, {1901, 0.2}, {std::nullopt, 0.4}};
  EffectFn effect = constant_effect(0.07);
  double unit_fx_sd = 1.0;
  std::vector<double> period_fx;  // empty = 0.1 * period index
  double noise_sd = 1.0;
  double selection_on_level = 0.0;
  double selection_on_covariate = 0.0;
  double covariate_trend = 0.0;
  // > 0: noise correlated across units with exp(-d / range) covariance.
  double spatial_range_km = 0.0;
  int n_counties = 10;
  std::uint64_t seed = 1;
};

struct TruthRecord {
  std::map<std::pair<int, int>, double> att;  // estimable cells (g, t)
  double overall = 0.0;
  std::map<int, double> event_study;
  std::vector<std::pair<int, double>> cohort_weights;  // estimable cohorts
};

struct SimulatedPanel {
  PanelDataset panel;  // outcome "y", covariate "x1", labels county/hundred
  TruthRecord truth;
};

/// Throws BAD_SHARES.
SimulatedPanel simulate_panel(const DgpConfig& cfg);

/// (mean_g Y_t - mean_g Y_base) - (mean_never Y_t - mean_never Y_base) by
/// direct four-mean arithmetic over units observed at both periods.
/// Throws EMPTY_GROUP.
double did_2x2_oracle(const PanelDataset& ds, const std::string& outcome, int g, int t, int base);

struct McDraw {
  double estimate = 0.0;
  double se = 0.0;
  double truth = 0.0;
};

using McEstimator = std::function<McDraw(const SimulatedPanel&)>;

struct McReport {
  int reps = 0;
  double mean_estimate = 0.0;
  double truth = 0.0;  // mean target across replications
  double bias = 0.0;
  std::optional<double> mc_se;
  std::optional<double> rmse;
  std::optional<double> coverage;  // share of 95% CIs covering the truth
  std::vector<McDraw> draws;
};

/// Replication r simulates with a seed derived from (seed, r); results do
/// not depend on thread count. mc_se and coverage need reps >= 2.
McReport monte_carlo(const McEstimator& estimator, const DgpConfig& cfg, int reps,
                     std::uint64_t seed);

std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t rep);

/// Overall group-time ATT on outcome "y", target = truth.overall.
McEstimator cs_overall_estimator(const std::vector<std::string>& covariates = {});
/// TWFE beta (unit + period effects only), target = truth.overall.
McEstimator twfe_estimator();

}  // namespace didkit
