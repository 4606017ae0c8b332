#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "didkit/estimate.hpp"
#include "didkit/panel.hpp"
#include "didkit/regress.hpp"
#include "didkit/variance.hpp"

namespace didkit {

/// Quantile bins 1..k. Bin b holds values in (q_{(b-1)/k}, q_{b/k}] where q_p
/// is the inverse-ECDF quantile (smallest order statistic with rank >= n*p).
/// Ties fall in the lowest feasible bin. NaN values get bin 0.
std::vector<int> decile_bins(std::span<const double> values, int k = 10);

struct ControlSpec {
  // Time-invariant covariates binned into deciles across units and
  // interacted with period.
  std::vector<std::string> decile_vars;
  // Label column whose levels are interacted with period; empty = none.
  std::string county_label = "county";
  // Additional linear regressors (row-level numeric columns).
  std::vector<std::string> extra_regressors;
  // Unit and period fixed effects only.
  bool none = false;
};

struct TwfeFit {
  FitResult fit;
  std::vector<Factor> factors;
  std::vector<std::size_t> rows;  // panel rows used
  DemeanResult demeaned;
  double mean_outcome = 0.0;
};

/// Fits y_it = a_i + a_t + beta * D_it + controls + e_it by absorbing all
/// fixed effects. Throws NO_TREATED, TREATMENT_ABSORBED, plus propagated
/// validation and engine errors.
TwfeFit fit_twfe(const PanelDataset& ds, const std::string& outcome, const ControlSpec& controls,
                 bool require_coords = false);

/// Treatment coefficient under each variance scheme.
std::vector<EstimateRow> estimate_twfe(const PanelDataset& ds, const std::string& outcome,
                                       const ControlSpec& controls,
                                       std::span<const VcovSpec> vcovs);
EstimateRow estimate_twfe(const PanelDataset& ds, const std::string& outcome,
                          const ControlSpec& controls, const VcovSpec& vcov);

/// Row-level variance inputs for a panel fit: cluster codes of `label`
/// ("unit" = unit id) and unit locations.
VcovData vcov_data_for_rows(const PanelDataset& ds, std::span<const std::size_t> rows,
                            const VcovSpec& spec);

inline constexpr const char* kTreatmentName = "treated";

}  // namespace didkit
