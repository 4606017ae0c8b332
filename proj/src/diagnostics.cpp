#include "didkit/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "didkit/error.hpp"
#include "didkit/stats.hpp"
#include "didkit/variance.hpp"

namespace didkit {

BalanceResult balance_regression(std::span<const double> values,
                                 const std::vector<bool>& ever_treated) {
  if (values.size() != ever_treated.size())
    throw Error("SCHEMA_ERROR", "values and treatment flags differ in length");
  std::vector<double> treated, control;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) continue;
    (ever_treated[i] ? treated : control).push_back(values[i]);
  }
  if (treated.empty() || control.empty())
    throw Error("NO_VARIATION", "balance regression needs both ever- and never-treated units");

  // With a single binary regressor the OLS solution is the difference in
  // group means; the classical variance is s^2 (1/n1 + 1/n0).
  BalanceResult out;
  out.n_treated = static_cast<long>(treated.size());
  out.n_control = static_cast<long>(control.size());
  const double m1 = mean(treated);
  const double m0 = mean(control);
  out.coef = m1 - m0;
  double ss = 0.0;
  for (double v : treated) ss += (v - m1) * (v - m1);
  for (double v : control) ss += (v - m0) * (v - m0);
  const double n = static_cast<double>(treated.size() + control.size());
  if (n > 2) {
    const double s2 = ss / (n - 2.0);
    out.se = std::sqrt(s2 * (1.0 / out.n_treated + 1.0 / out.n_control));
  }
  out.p_value = out.se > 0 ? normal_p_value(out.coef / out.se) : (out.coef == 0 ? 1.0 : 0.0);
  out.stars = stars(out.p_value);
  return out;
}

double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 0.2) return 1.0;  // series converges slowly; value is 1 to 1e-25 here
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 1.0 : -1.0) * term;
    if (term < 1e-17) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_test(std::span<const double> x0, std::span<const double> x1) {
  std::vector<double> a, b;
  for (double v : x0)
    if (!std::isnan(v)) a.push_back(v);
  for (double v : x1)
    if (!std::isnan(v)) b.push_back(v);
  if (a.empty() || b.empty()) throw Error("EMPTY_SAMPLE", "KS test needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  // Merge walk: after consuming every copy of the next value in both
  // samples, compare the two ECDFs.
  while (i < a.size() || j < b.size()) {
    const double v = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  KsResult out;
  out.d = d;
  const double ne = na * nb / (na + nb);
  out.p_value = kolmogorov_survival(std::sqrt(ne) * d);
  return out;
}

SummaryRow summarize_values(const std::string& name, std::span<const double> values) {
  SummaryRow row;
  row.variable = name;
  std::vector<double> v;
  for (double x : values)
    if (!std::isnan(x)) v.push_back(x);
  row.n = static_cast<long>(v.size());
  if (v.empty()) return row;
  row.mean = mean(v);
  if (v.size() > 1) row.sd = sample_sd(v);
  row.min = *std::min_element(v.begin(), v.end());
  row.max = *std::max_element(v.begin(), v.end());
  return row;
}

std::vector<SummaryRow> summary_stats(const PanelDataset& ds, std::span<const std::string> vars) {
  std::vector<SummaryRow> out;
  for (const auto& name : vars) out.push_back(summarize_values(name, ds.column(name)));
  return out;
}

double silverman_bandwidth(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double sd = sample_sd(v);
  const double iqr = quantile_sorted(v, 0.75) - quantile_sorted(v, 0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  return 0.9 * spread * std::pow(static_cast<double>(v.size()), -0.2);
}

namespace {

struct KdeSetup {
  std::vector<double> values;
  DensitySeries series;
};

KdeSetup kde_setup(std::span<const double> input, int grid_size) {
  KdeSetup s;
  for (double v : input)
    if (!std::isnan(v)) s.values.push_back(v);
  if (s.values.size() < 2 || grid_size < 2)
    throw Error("DEGENERATE", "density needs at least two values and two grid points");
  const auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
  if (*lo == *hi) throw Error("DEGENERATE", "all values are equal");
  const double h = silverman_bandwidth(s.values);
  s.series.bandwidth = h;
  const double a = *lo - 3.0 * h;
  const double b = *hi + 3.0 * h;
  s.series.grid.resize(static_cast<std::size_t>(grid_size));
  for (int g = 0; g < grid_size; ++g) s.series.grid[g] = a + (b - a) * g / (grid_size - 1);
  s.series.density.assign(static_cast<std::size_t>(grid_size), 0.0);
  return s;
}

double density_at(double x, const std::vector<double>& values, double h) {
  static const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  double sum = 0.0;
  for (double v : values) {
    const double z = (x - v) / h;
    sum += std::exp(-0.5 * z * z);
  }
  return sum * norm / (h * static_cast<double>(values.size()));
}

}  // namespace

DensitySeries kde_export(std::span<const double> values, int grid_size) {
  auto s = kde_setup(values, grid_size);
  const double h = s.series.bandwidth;
#pragma omp parallel for schedule(static)
  for (int g = 0; g < grid_size; ++g) s.series.density[g] = density_at(s.series.grid[g], s.values, h);
  return s.series;
}

DensitySeries kde_export_serial(std::span<const double> values, int grid_size) {
  auto s = kde_setup(values, grid_size);
  for (int g = 0; g < grid_size; ++g)
    s.series.density[g] = density_at(s.series.grid[g], s.values, s.series.bandwidth);
  return s.series;
}

double trapezoid(std::span<const double> x, std::span<const double> y) {
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return area;
}

CrossSection base_cross_section(const PanelDataset& ds, int base_period) {
  const auto schedule = schedule_of(ds);
  CrossSection cs;
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    const auto& row = ds.rows[r];
    if (row.year != base_period) continue;
    if (schedule.treated_at(row.unit, base_period)) {
      ++cs.n_excluded_treated;
      continue;
    }
    cs.units.push_back(row.unit);
    cs.rows.push_back(r);
    cs.ever_treated.push_back(schedule.first_treated[row.unit].has_value());
  }
  return cs;
}

}  // namespace didkit
