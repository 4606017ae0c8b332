#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "didkit/panel.hpp"

namespace didkit {

struct BalanceResult {
  double coef = 0.0;  // mean(ever treated) - mean(never treated)
  double se = 0.0;    // classical OLS standard error
  double p_value = 1.0;
  std::string stars;
  long n_treated = 0;
  long n_control = 0;
};

/// OLS of `values` on an intercept and the ever-treated indicator. NaN values
/// are skipped. Throws NO_VARIATION when either group is empty.
BalanceResult balance_regression(std::span<const double> values,
                                 const std::vector<bool>& ever_treated);

struct KsResult {
  double d = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov statistic with the asymptotic p-value at
/// effective size n0*n1/(n0+n1). NaN values are skipped. Throws EMPTY_SAMPLE.
KsResult ks_test(std::span<const double> x0, std::span<const double> x1);

/// P(K > lambda) for the Kolmogorov distribution.
double kolmogorov_survival(double lambda);

struct SummaryRow {
  std::string variable;
  long n = 0;
  std::optional<double> mean, sd, min, max;
};

/// Statistics over the non-missing values of each column.
std::vector<SummaryRow> summary_stats(const PanelDataset& ds, std::span<const std::string> vars);
SummaryRow summarize_values(const std::string& name, std::span<const double> values);

struct DensitySeries {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
};

/// 0.9 * min(sd, IQR/1.34) * n^(-1/5); falls back to sd when the IQR is 0.
double silverman_bandwidth(std::span<const double> values);

/// Gaussian KDE on an even grid over [min - 3h, max + 3h], evaluated in
/// parallel over grid points. NaN values are skipped. Throws DEGENERATE.
DensitySeries kde_export(std::span<const double> values, int grid_size = 512);
/// Single-threaded reference for kde_export; identical output.
DensitySeries kde_export_serial(std::span<const double> values, int grid_size = 512);

double trapezoid(std::span<const double> x, std::span<const double> y);

/// Units observed at `base_period` and not yet treated there, with an
/// ever-treated flag (any recorded treatment year).
struct CrossSection {
  std::vector<std::size_t> units;
  std::vector<std::size_t> rows;
  std::vector<bool> ever_treated;
  long n_excluded_treated = 0;
};

CrossSection base_cross_section(const PanelDataset& ds, int base_period);

}  // namespace didkit
