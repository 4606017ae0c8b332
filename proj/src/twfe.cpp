#include "didkit/twfe.hpp"

#include <algorithm>
#include <cmath>

#include "didkit/error.hpp"

namespace didkit {

EstimateRow make_estimate_row(std::string outcome, std::string estimator, std::string vcov,
                              double estimate, double se, long n_obs, double mean_outcome) {
  EstimateRow row;
  row.outcome = std::move(outcome);
  row.estimator = std::move(estimator);
  row.vcov = std::move(vcov);
  row.estimate = estimate;
  row.se = se;
  row.p_value = se > 0.0 ? normal_p_value(estimate / se) : std::nan("");
  row.stars = stars(row.p_value);
  row.n_obs = n_obs;
  row.mean_outcome = mean_outcome;
  return row;
}

std::vector<int> decile_bins(std::span<const double> values, int k) {
  std::vector<double> sorted;
  for (double v : values)
    if (!std::isnan(v)) sorted.push_back(v);
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> bins(values.size(), 0);
  if (sorted.empty()) return bins;

  const long n = static_cast<long>(sorted.size());
  std::vector<double> upper(static_cast<std::size_t>(k));
  for (int b = 1; b <= k; ++b) {
    const long rank = (n * b + k - 1) / k;  // ceil(n * b / k)
    upper[b - 1] = sorted[std::max(rank, 1L) - 1];
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) continue;
    auto it = std::lower_bound(upper.begin(), upper.end(), values[i]);
    bins[i] = static_cast<int>(it - upper.begin()) + 1;
  }
  return bins;
}

namespace {

std::vector<int> cluster_codes(const PanelDataset& ds, std::span<const std::size_t> rows,
                               const std::string& label) {
  std::vector<std::string> per_row;
  per_row.reserve(rows.size());
  if (label == "unit") {
    for (auto r : rows) per_row.push_back(ds.units[ds.rows[r].unit]);
  } else {
    const auto& col = ds.label_column(label);
    for (auto r : rows) per_row.push_back(col[r]);
  }
  return Factor::from_labels(per_row).codes;
}

}  // namespace

VcovData vcov_data_for_rows(const PanelDataset& ds, std::span<const std::size_t> rows,
                            const VcovSpec& spec) {
  VcovData data;
  if (spec.scheme == VcovScheme::cluster) data.cluster = cluster_codes(ds, rows, spec.cluster_label);
  if (spec.scheme == VcovScheme::conley) {
    data.points = unit_points(ds);
    for (auto r : rows) data.location.push_back(ds.rows[r].unit);
  }
  return data;
}

TwfeFit fit_twfe(const PanelDataset& ds, const std::string& outcome, const ControlSpec& controls,
                 bool require_coords) {
  ValidationOptions vopts;
  if (!controls.none) vopts.covariates = controls.decile_vars;
  vopts.require_coords = require_coords;
  require_valid(ds, vopts);
  const auto& y_col = ds.column(outcome);

  std::vector<const std::vector<double>*> extras;
  if (!controls.none)
    for (const auto& name : controls.extra_regressors) extras.push_back(&ds.column(name));

  TwfeFit out;
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    if (std::isnan(y_col[r])) continue;
    if (std::any_of(extras.begin(), extras.end(), [&](const auto* c) { return std::isnan((*c)[r]); }))
      continue;
    out.rows.push_back(r);
  }
  const auto schedule = schedule_of(ds);
  const auto n = static_cast<Eigen::Index>(out.rows.size());
  Eigen::MatrixXd cols(n, 2 + static_cast<Eigen::Index>(extras.size()));
  long n_treated = 0;
  std::vector<long> unit_key(n), period_key(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = ds.rows[out.rows[i]];
    const bool d = schedule.treated_at(row.unit, row.year);
    n_treated += d;
    cols(i, 0) = y_col[out.rows[i]];
    cols(i, 1) = d ? 1.0 : 0.0;
    for (std::size_t e = 0; e < extras.size(); ++e) cols(i, 2 + e) = (*extras[e])[out.rows[i]];
    unit_key[i] = static_cast<long>(row.unit);
    period_key[i] = row.year;
  }
  if (n_treated == 0) throw Error("NO_TREATED", "no treated observations for '" + outcome + "'");
  out.mean_outcome = cols.col(0).mean();

  const Factor unit_f = Factor::from_keys(unit_key);
  const Factor period_f = Factor::from_keys(period_key);
  out.factors = {unit_f, period_f};
  if (!controls.none) {
    if (!controls.county_label.empty()) {
      const auto& county = ds.label_column(controls.county_label);
      std::vector<std::string> labels;
      for (auto r : out.rows) labels.push_back(county[r]);
      out.factors.push_back(interact(Factor::from_labels(labels), period_f));
    }
    for (const auto& var : controls.decile_vars) {
      const auto bins = decile_bins(unit_values(ds, var));
      std::vector<long> keys;
      for (auto r : out.rows) keys.push_back(bins[ds.rows[r].unit]);
      out.factors.push_back(interact(Factor::from_keys(keys), period_f));
    }
  }

  out.demeaned = demean(cols, out.factors);
  std::vector<std::string> all_names{kTreatmentName};
  for (const auto& e : controls.extra_regressors)
    if (!controls.none) all_names.push_back(e);
  // A regressor the fixed effects absorb demeans to rounding noise; drop it
  // before the relative collinearity check can mistake noise for signal.
  std::vector<std::string> names, absorbed;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 1; j < cols.cols(); ++j) {
    const auto& name = all_names[static_cast<std::size_t>(j - 1)];
    if (out.demeaned.columns.col(j).norm() <= 1e-7 * cols.col(j).norm()) {
      absorbed.push_back(name);
    } else {
      names.push_back(name);
      keep.push_back(j);
    }
  }
  if (names.empty() || names.front() != kTreatmentName)
    throw Error("TREATMENT_ABSORBED", "treatment indicator is collinear with the fixed effects");
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = out.demeaned.columns.col(keep[j]);
  out.fit = ols(DesignMatrix(names, x), out.demeaned.columns.col(0));
  if (out.fit.names.empty() || out.fit.names.front() != kTreatmentName)
    throw Error("TREATMENT_ABSORBED", "treatment indicator is collinear with the fixed effects");
  out.fit.dropped_columns.insert(out.fit.dropped_columns.end(), absorbed.begin(), absorbed.end());
  out.fit.n_absorbed = absorbed_dof(out.factors);
  out.fit.dof_residual -= out.fit.n_absorbed;
  out.fit.small_sample_k += out.fit.n_absorbed;
  if (out.fit.dof_residual <= 0)
    throw Error("INSUFFICIENT_ROWS", "no residual degrees of freedom after absorbing effects");
  return out;
}

std::vector<EstimateRow> estimate_twfe(const PanelDataset& ds, const std::string& outcome,
                                       const ControlSpec& controls,
                                       std::span<const VcovSpec> vcovs) {
  const bool spatial = std::any_of(vcovs.begin(), vcovs.end(),
                                   [](const VcovSpec& v) { return v.scheme == VcovScheme::conley; });
  const TwfeFit tw = fit_twfe(ds, outcome, controls, spatial);
  const long n = static_cast<long>(tw.rows.size());
  const long kept = static_cast<long>(tw.fit.names.size());
  std::vector<EstimateRow> rows;
  for (const auto& spec : vcovs) {
    FitResult fit = tw.fit;
    const VcovData data = vcov_data_for_rows(ds, tw.rows, spec);
    if (spec.scheme == VcovScheme::cluster) {
      // Fixed effects nested within clusters do not count toward k.
      std::vector<Factor> nested;
      Factor cl;
      cl.codes = data.cluster;
      cl.n_levels = data.cluster.empty() ? 0 : *std::max_element(data.cluster.begin(), data.cluster.end()) + 1;
      for (const auto& f : tw.factors)
        if (nested_in(f, cl)) nested.push_back(f);
      fit.small_sample_k = std::max(kept, fit.small_sample_k - absorbed_dof(nested));
    }
    const VcovResult v = sandwich_vcov(fit, spec, data);
    rows.push_back(make_estimate_row(outcome, "twfe", spec.name(), fit.coefficients[0],
                                     v.se()[0], n, tw.mean_outcome));
  }
  return rows;
}

EstimateRow estimate_twfe(const PanelDataset& ds, const std::string& outcome,
                          const ControlSpec& controls, const VcovSpec& vcov) {
  return estimate_twfe(ds, outcome, controls, std::span<const VcovSpec>(&vcov, 1)).front();
}

}  // namespace didkit
