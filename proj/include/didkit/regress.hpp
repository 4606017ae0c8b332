#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace didkit {

/// Named regressors. Construction rejects non-finite entries (NONFINITE_INPUT)
/// and name/column count mismatches.
class DesignMatrix {
 public:
  DesignMatrix(std::vector<std::string> names, Eigen::MatrixXd values);

  const std::vector<std::string>& names() const { return names_; }
  const Eigen::MatrixXd& values() const { return values_; }
  Eigen::Index n_rows() const { return values_.rows(); }
  Eigen::Index n_cols() const { return values_.cols(); }

 private:
  std::vector<std::string> names_;
  Eigen::MatrixXd values_;
};

struct FitResult {
  std::vector<std::string> names;  // retained columns, in input order
  Eigen::VectorXd coefficients;
  std::vector<std::string> dropped_columns;
  Eigen::VectorXd residuals;  // y - fitted, response scale
  Eigen::MatrixXd scores;     // per-row gradient contributions, n x k
  Eigen::MatrixXd hessian;    // X'WX on retained columns
  long dof_residual = 0;
  long n_absorbed = 0;  // fixed-effect levels absorbed before fitting
  // Parameter count used by HC1/CR1 finite-sample factors; defaults to
  // n - dof_residual and may be lowered when absorbed effects nest in clusters.
  long small_sample_k = 0;
  std::optional<double> log_likelihood;
  int iterations = 0;

  Eigen::Index n_obs() const { return residuals.size(); }
  // Throws UNKNOWN_COEFFICIENT for dropped or unknown names.
  double coefficient(const std::string& name) const;
};

/// Indices of columns kept by sequential orthogonalization in input order; a
/// column is dropped when its residual norm falls below rel_tol times its own
/// norm.
std::vector<Eigen::Index> independent_columns(const Eigen::MatrixXd& x, double rel_tol = 1e-10);

/// Least squares (weighted when `weights` is given). Collinear columns are
/// dropped in input order. Throws ALL_COLLINEAR, NONFINITE_INPUT,
/// BAD_WEIGHTS, INSUFFICIENT_ROWS.
FitResult ols(const DesignMatrix& x, const Eigen::VectorXd& y,
              const std::optional<Eigen::VectorXd>& weights = std::nullopt);

/// Integer-coded categorical variable.
struct Factor {
  std::vector<int> codes;
  int n_levels = 0;

  static Factor from_labels(std::span<const std::string> labels);
  static Factor from_keys(std::span<const long> keys);
  std::size_t size() const { return codes.size(); }
};

/// Interaction of two factors (one level per observed pair).
Factor interact(const Factor& a, const Factor& b);

struct DemeanOptions {
  double tol = 1e-8;
  int max_iter = 1000;
};

struct DemeanResult {
  Eigen::MatrixXd columns;
  int iterations = 0;             // max sweeps over columns
  double max_group_mean = 0.0;    // at exit, across all factors and columns
};

/// Alternating projections: repeatedly subtracts group means for each factor
/// until every within-group mean is below tol in absolute value. Columns are
/// processed in parallel. Throws NO_CONVERGENCE.
DemeanResult demean(const Eigen::MatrixXd& columns, std::span<const Factor> factors,
                    const DemeanOptions& options = {});
/// Single-threaded reference for demean; identical results.
DemeanResult demean_serial(const Eigen::MatrixXd& columns, std::span<const Factor> factors,
                           const DemeanOptions& options = {});

/// Degrees of freedom absorbed by a set of fixed effects: factors nested in a
/// finer factor are redundant. Two factors are corrected by the connected
/// components of their bipartite level graph. With three or more, the rank of
/// the remaining dummies after projecting off the largest factor is computed
/// directly; beyond 4000 remaining levels each later factor loses one level,
/// or the level count of the coarsest factor it nests in.
long absorbed_dof(std::span<const Factor> factors);

/// True when every level of `fine` maps to a single level of `coarse`.
bool nested_in(const Factor& fine, const Factor& coarse);

/// Poisson regression with log link by IRLS. Throws NEGATIVE_COUNT,
/// SEPARATION, NO_CONVERGENCE, ALL_COLLINEAR.
FitResult poisson_fit(const DesignMatrix& x, const Eigen::VectorXd& y);

double poisson_log_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& beta);

}  // namespace didkit
