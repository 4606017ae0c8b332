#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "didkit/estimate.hpp"
#include "didkit/panel.hpp"
#include "didkit/variance.hpp"

namespace didkit {

enum class CsMethod { simple, outcome_regression };

/// Balanced unit x period sample used by the group-time estimator. Units
/// already treated in the first period are dropped (no base period); units
/// treated after the last period count as never treated; units with a
/// missing covariate are dropped.
struct CsSample {
  std::string outcome;
  std::vector<int> periods;
  std::vector<UnitId> units;
  std::vector<std::size_t> source_unit;      // index into the source panel
  Eigen::MatrixXd y;                         // units x periods
  std::vector<std::optional<int>> cohort;    // nullopt = never treated
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;                // units x covariates
  long n_already_treated = 0;
  long n_missing_covariates = 0;

  Eigen::Index n_units() const { return y.rows(); }
  long n_obs() const { return static_cast<long>(y.size()); }
  double mean_outcome() const { return y.mean(); }
  std::vector<int> cohorts() const;  // sorted treated cohorts
  long cohort_size(int g) const;
};

CsSample prepare_cs_sample(const PanelDataset& ds, const std::string& outcome,
                           const std::vector<std::string>& covariates = {});

struct GroupTimeCell {
  int g = 0;
  int t = 0;
  int base = 0;
  double att = 0.0;
  double se = 0.0;
  long n_treated = 0;
  long n_control = 0;
  Eigen::VectorXd influence;  // per sample unit; 0 for units not used
};

/// ATT(g,t) against never-treated units. Base period: the last period before
/// g for t >= g, the last period before t for t < g. Throws
/// NO_NEVER_TREATED, NO_BASE_PERIOD, EMPTY_COHORT, UNKNOWN_PERIOD.
GroupTimeCell att_gt(const CsSample& sample, int g, int t, CsMethod method = CsMethod::simple);

/// Every estimable (g, t) cell, computed in parallel; ordered by (g, t).
std::vector<GroupTimeCell> all_att_gt(const CsSample& sample, CsMethod method);

/// Estimate with its influence function; se = sqrt(sum(IF^2)) / n.
struct AggregateEstimate {
  double estimate = 0.0;
  double se = 0.0;
  Eigen::VectorXd influence;
};

/// Weighted combination of cohort-specific terms with weights proportional
/// to cohort size. The influence function includes the contribution from
/// estimating the weights.
AggregateEstimate combine_by_cohort(std::span<const double> estimates,
                                    std::span<const Eigen::VectorXd> influences,
                                    std::span<const int> cohort_of_term, const CsSample& sample);

/// Cohort-size-weighted average over cohorts of each cohort's mean post
/// treatment ATT(g,t). Throws NO_CELLS.
AggregateEstimate aggregate_overall(std::span<const GroupTimeCell> cells, const CsSample& sample);

/// Same aggregation applied to plain numbers (e.g. true cell effects), with
/// explicit cohort weights.
double overall_from_cells(const std::vector<std::pair<std::pair<int, int>, double>>& cells,
                          const std::vector<std::pair<int, double>>& cohort_weights);

struct BootstrapResult {
  std::vector<double> se;  // IQR-based bootstrap standard errors
  double critical = 0.0;   // 95% quantile of the studentized sup statistic
};

/// Multiplier bootstrap with Mammen weights per unit. `influence` is
/// units x estimates. Replication b uses stream (seed, b). Throws
/// DEGENERATE_INFLUENCE, BAD_BOOTSTRAP (B < 99).
BootstrapResult multiplier_bootstrap(const Eigen::MatrixXd& influence, int reps,
                                     std::uint64_t seed);
/// Single-threaded reference; identical output.
BootstrapResult multiplier_bootstrap_serial(const Eigen::MatrixXd& influence, int reps,
                                            std::uint64_t seed);

struct EventStudyPoint {
  int event_time = 0;
  double estimate = 0.0;
  double se = 0.0;           // bootstrap
  double analytic_se = 0.0;  // influence function
  double lo95 = 0.0;
  double hi95 = 0.0;
  double band_lo = 0.0;
  double band_hi = 0.0;
};

struct EventStudySeries {
  std::vector<EventStudyPoint> points;
  double band_critical = 0.0;  // max(sup-t critical value, 1.96)
  double sup_t_critical = 0.0;
};

struct BootstrapOptions {
  int reps = 999;
  std::uint64_t seed = 1;
};

/// Size-weighted average of cells by calendar event time t - g, with
/// pointwise CIs and sup-t uniform bands. Throws NO_CELLS.
EventStudySeries aggregate_event_study(std::span<const GroupTimeCell> cells,
                                       const CsSample& sample,
                                       const BootstrapOptions& options = {});

/// se of an influence function clustered by per-unit codes, with G/(G-1).
double clustered_if_se(const Eigen::VectorXd& influence, std::span<const int> cluster);

/// Overall ATT rows for each variance scheme. HC1 and cluster:unit use the
/// influence-function se; other cluster labels aggregate the influence
/// function by cluster. Conley schemes are not available for this
/// estimator and are skipped.
std::vector<EstimateRow> estimate_cs(const PanelDataset& ds, const std::string& outcome,
                                     const std::vector<std::string>& covariates,
                                     std::span<const VcovSpec> vcovs);

}  // namespace didkit
