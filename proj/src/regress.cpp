#include "didkit/regress.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "didkit/error.hpp"

namespace didkit {

DesignMatrix::DesignMatrix(std::vector<std::string> names, Eigen::MatrixXd values)
    : names_(std::move(names)), values_(std::move(values)) {
  if (static_cast<Eigen::Index>(names_.size()) != values_.cols())
    throw Error("SCHEMA_ERROR", "design matrix names do not match column count");
  if (!values_.allFinite()) throw Error("NONFINITE_INPUT", "design matrix has non-finite entries");
}

double FitResult::coefficient(const std::string& name) const {
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == name) return coefficients[static_cast<Eigen::Index>(j)];
  throw Error("UNKNOWN_COEFFICIENT", "no retained coefficient '" + name + "'");
}

std::vector<Eigen::Index> independent_columns(const Eigen::MatrixXd& x, double rel_tol) {
  std::vector<Eigen::Index> kept;
  Eigen::MatrixXd q(x.rows(), 0);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double norm0 = x.col(j).norm();
    if (norm0 == 0.0) continue;
    Eigen::VectorXd v = x.col(j);
    for (int pass = 0; pass < 2 && q.cols() > 0; ++pass) v -= q * (q.transpose() * v);
    const double norm = v.norm();
    if (norm <= rel_tol * norm0) continue;
    q.conservativeResize(Eigen::NoChange, q.cols() + 1);
    q.col(q.cols() - 1) = v / norm;
    kept.push_back(j);
  }
  return kept;
}

namespace {

Eigen::MatrixXd take_columns(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = x.col(cols[j]);
  return out;
}

void split_names(const DesignMatrix& x, const std::vector<Eigen::Index>& kept, FitResult& fit) {
  std::vector<bool> keep(static_cast<std::size_t>(x.n_cols()), false);
  for (auto j : kept) keep[static_cast<std::size_t>(j)] = true;
  for (std::size_t j = 0; j < keep.size(); ++j)
    (keep[j] ? fit.names : fit.dropped_columns).push_back(x.names()[j]);
}

}  // namespace

FitResult ols(const DesignMatrix& x, const Eigen::VectorXd& y,
              const std::optional<Eigen::VectorXd>& weights) {
  const Eigen::Index n = x.n_rows();
  if (y.size() != n) throw Error("SCHEMA_ERROR", "response length differs from design rows");
  if (!y.allFinite()) throw Error("NONFINITE_INPUT", "response has non-finite entries");
  Eigen::VectorXd sw;
  if (weights) {
    if (weights->size() != n || !weights->allFinite() || (weights->array() <= 0.0).any())
      throw Error("BAD_WEIGHTS", "weights must be finite and positive, one per row");
    sw = weights->array().sqrt();
  }

  Eigen::MatrixXd xw = x.values();
  Eigen::VectorXd yw = y;
  if (weights) {
    xw = sw.asDiagonal() * xw;
    yw = sw.asDiagonal() * yw;
  }
  const auto kept = independent_columns(xw);
  if (kept.empty()) throw Error("ALL_COLLINEAR", "no linearly independent regressor");
  const auto k = static_cast<Eigen::Index>(kept.size());
  if (n < k) throw Error("INSUFFICIENT_ROWS", "fewer rows than retained regressors");

  FitResult fit;
  split_names(x, kept, fit);
  const Eigen::MatrixXd xk = take_columns(x.values(), kept);
  const Eigen::MatrixXd xwk = take_columns(xw, kept);
  fit.coefficients = xwk.householderQr().solve(yw);
  fit.residuals = y - xk * fit.coefficients;
  Eigen::VectorXd we = fit.residuals;
  if (weights) we = weights->cwiseProduct(fit.residuals);
  fit.scores = we.asDiagonal() * xk;
  fit.hessian = xwk.transpose() * xwk;
  fit.dof_residual = static_cast<long>(n - k);
  fit.small_sample_k = static_cast<long>(k);
  return fit;
}

Factor Factor::from_labels(std::span<const std::string> labels) {
  Factor f;
  std::unordered_map<std::string, int> index;
  f.codes.reserve(labels.size());
  for (const auto& l : labels) {
    auto [it, inserted] = index.emplace(l, f.n_levels);
    if (inserted) ++f.n_levels;
    f.codes.push_back(it->second);
  }
  return f;
}

Factor Factor::from_keys(std::span<const long> keys) {
  Factor f;
  std::unordered_map<long, int> index;
  f.codes.reserve(keys.size());
  for (long k : keys) {
    auto [it, inserted] = index.emplace(k, f.n_levels);
    if (inserted) ++f.n_levels;
    f.codes.push_back(it->second);
  }
  return f;
}

Factor interact(const Factor& a, const Factor& b) {
  if (a.size() != b.size()) throw Error("SCHEMA_ERROR", "factor lengths differ");
  std::vector<long> keys(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    keys[i] = static_cast<long>(a.codes[i]) * b.n_levels + b.codes[i];
  return Factor::from_keys(keys);
}

namespace {

struct ColumnDemean {
  int iterations = 0;
  double max_mean = 0.0;
  bool converged = false;
};

// Demeans one column in place. Shared by the serial and parallel drivers so
// both produce bit-identical output.
ColumnDemean demean_column(double* col, Eigen::Index n, std::span<const Factor> factors,
                           const std::vector<std::vector<double>>& counts,
                           const DemeanOptions& options) {
  ColumnDemean out;
  std::vector<std::vector<double>> sums(factors.size());
  for (std::size_t f = 0; f < factors.size(); ++f) sums[f].resize(factors[f].n_levels);

  auto max_mean = [&]() {
    double worst = 0.0;
    for (std::size_t f = 0; f < factors.size(); ++f) {
      auto& s = sums[f];
      std::fill(s.begin(), s.end(), 0.0);
      const auto& codes = factors[f].codes;
      for (Eigen::Index i = 0; i < n; ++i) s[codes[i]] += col[i];
      for (std::size_t l = 0; l < s.size(); ++l) worst = std::max(worst, std::abs(s[l] / counts[f][l]));
    }
    return worst;
  };

  out.max_mean = max_mean();
  if (out.max_mean < options.tol) {
    out.converged = true;
    return out;
  }
  while (out.iterations < options.max_iter) {
    ++out.iterations;
    for (std::size_t f = 0; f < factors.size(); ++f) {
      auto& s = sums[f];
      std::fill(s.begin(), s.end(), 0.0);
      const auto& codes = factors[f].codes;
      for (Eigen::Index i = 0; i < n; ++i) s[codes[i]] += col[i];
      for (std::size_t l = 0; l < s.size(); ++l) s[l] /= counts[f][l];
      for (Eigen::Index i = 0; i < n; ++i) col[i] -= s[codes[i]];
    }
    out.max_mean = max_mean();
    if (out.max_mean < options.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

std::vector<std::vector<double>> level_counts(Eigen::Index n, std::span<const Factor> factors) {
  std::vector<std::vector<double>> counts(factors.size());
  for (std::size_t f = 0; f < factors.size(); ++f) {
    if (static_cast<Eigen::Index>(factors[f].size()) != n)
      throw Error("SCHEMA_ERROR", "factor length differs from column length");
    counts[f].assign(factors[f].n_levels, 0.0);
    for (int c : factors[f].codes) counts[f][c] += 1.0;
    for (double c : counts[f])
      if (c == 0.0) throw Error("EMPTY_LEVEL", "factor level without observations");
  }
  return counts;
}

DemeanResult finish(Eigen::MatrixXd columns, const std::vector<ColumnDemean>& stats) {
  DemeanResult result;
  result.columns = std::move(columns);
  for (const auto& s : stats) {
    result.iterations = std::max(result.iterations, s.iterations);
    result.max_group_mean = std::max(result.max_group_mean, s.max_mean);
  }
  for (const auto& s : stats)
    if (!s.converged)
      throw Error("NO_CONVERGENCE", "demeaning did not converge; max residual group mean " +
                                        std::to_string(result.max_group_mean));
  return result;
}

}  // namespace

DemeanResult demean(const Eigen::MatrixXd& columns, std::span<const Factor> factors,
                    const DemeanOptions& options) {
  const auto counts = level_counts(columns.rows(), factors);
  Eigen::MatrixXd out = columns;
  std::vector<ColumnDemean> stats(static_cast<std::size_t>(out.cols()));
  const long p = static_cast<long>(out.cols());
#pragma omp parallel for schedule(dynamic, 1)
  for (long j = 0; j < p; ++j)
    stats[j] = demean_column(out.col(j).data(), out.rows(), factors, counts, options);
  return finish(std::move(out), stats);
}

DemeanResult demean_serial(const Eigen::MatrixXd& columns, std::span<const Factor> factors,
                           const DemeanOptions& options) {
  const auto counts = level_counts(columns.rows(), factors);
  Eigen::MatrixXd out = columns;
  std::vector<ColumnDemean> stats(static_cast<std::size_t>(out.cols()));
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    stats[j] = demean_column(out.col(j).data(), out.rows(), factors, counts, options);
  return finish(std::move(out), stats);
}

bool nested_in(const Factor& fine, const Factor& coarse) {
  std::vector<int> parent(fine.n_levels, -1);
  for (std::size_t i = 0; i < fine.size(); ++i) {
    int& p = parent[fine.codes[i]];
    if (p < 0) p = coarse.codes[i];
    else if (p != coarse.codes[i]) return false;
  }
  return true;
}

namespace {

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

long connected_components(const Factor& a, const Factor& b) {
  std::vector<int> parent(a.n_levels + b.n_levels);
  std::iota(parent.begin(), parent.end(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int ra = find_root(parent, a.codes[i]);
    const int rb = find_root(parent, a.n_levels + b.codes[i]);
    if (ra != rb) parent[ra] = rb;
  }
  long components = 0;
  for (int v = 0; v < static_cast<int>(parent.size()); ++v)
    if (find_root(parent, v) == v) ++components;
  return components;
}

}  // namespace

namespace {
constexpr long kExactRankLevels = 4000;
}

long absorbed_dof(std::span<const Factor> factors) {
  const std::size_t m = factors.size();
  std::vector<bool> redundant(m, false);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m && !redundant[a]; ++b) {
      if (a == b || redundant[b]) continue;
      if (!nested_in(factors[b], factors[a])) continue;
      // Identical partitions: keep the earlier one.
      const bool same = factors[a].n_levels == factors[b].n_levels;
      if (!same || a > b) redundant[a] = true;
    }
  }
  std::vector<std::size_t> active;
  for (std::size_t f = 0; f < m; ++f)
    if (!redundant[f]) active.push_back(f);
  if (active.empty()) return 0;

  if (active.size() >= 3) {
    // Exact rank: dummies of the remaining factors projected off the factor
    // with the most levels, whose group means are exact.
    std::size_t big = active[0];
    long rest_levels = 0;
    for (std::size_t f : active)
      if (factors[f].n_levels > factors[big].n_levels) big = f;
    for (std::size_t f : active)
      if (f != big) rest_levels += factors[f].n_levels;
    if (rest_levels <= kExactRankLevels) {
      const Factor& g = factors[big];
      const auto n = static_cast<Eigen::Index>(g.size());
      Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, rest_levels);
      Eigen::Index offset = 0;
      for (std::size_t f : active) {
        if (f == big) continue;
        for (Eigen::Index i = 0; i < n; ++i) d(i, offset + factors[f].codes[i]) = 1.0;
        offset += factors[f].n_levels;
      }
      Eigen::MatrixXd means = Eigen::MatrixXd::Zero(g.n_levels, rest_levels);
      Eigen::VectorXd count = Eigen::VectorXd::Zero(g.n_levels);
      for (Eigen::Index i = 0; i < n; ++i) {
        means.row(g.codes[i]) += d.row(i);
        count[g.codes[i]] += 1.0;
      }
      for (Eigen::Index l = 0; l < g.n_levels; ++l) means.row(l) /= count[l];
      for (Eigen::Index i = 0; i < n; ++i) d.row(i) -= means.row(g.codes[i]);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d);
      qr.setThreshold(1e-9);
      return g.n_levels + static_cast<long>(qr.rank());
    }
  }

  long dof = factors[active[0]].n_levels;
  if (active.size() >= 2)
    dof += factors[active[1]].n_levels -
           connected_components(factors[active[0]], factors[active[1]]);
  for (std::size_t k = 2; k < active.size(); ++k) {
    const Factor& f = factors[active[k]];
    long lost = 1;
    for (std::size_t a = 0; a < m; ++a) {
      if (a == active[k]) continue;
      const bool spanned = redundant[a] || std::find(active.begin(), active.begin() + static_cast<long>(k), a) !=
                                               active.begin() + static_cast<long>(k);
      if (spanned && nested_in(f, factors[a])) lost = std::max<long>(lost, factors[a].n_levels);
    }
    dof += f.n_levels - lost;
  }
  return dof;
}

double poisson_log_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = x * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    ll += y[i] * eta[i] - std::exp(eta[i]) - std::lgamma(y[i] + 1.0);
  return ll;
}

namespace {

double poisson_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double term = y[i] > 0 ? y[i] * std::log(y[i] / mu[i]) : 0.0;
    dev += 2.0 * (term - (y[i] - mu[i]));
  }
  return dev;
}

}  // namespace

FitResult poisson_fit(const DesignMatrix& x, const Eigen::VectorXd& y) {
  const Eigen::Index n = x.n_rows();
  if (y.size() != n) throw Error("SCHEMA_ERROR", "response length differs from design rows");
  if (!y.allFinite() || (y.array() < 0.0).any())
    throw Error("NEGATIVE_COUNT", "Poisson response must be finite and non-negative");
  if ((y.array() == 0.0).all()) throw Error("SEPARATION", "all counts are zero");

  const auto kept = independent_columns(x.values());
  if (kept.empty()) throw Error("ALL_COLLINEAR", "no linearly independent regressor");
  const Eigen::MatrixXd xk = take_columns(x.values(), kept);
  const Eigen::Index k = xk.cols();
  if (n < k) throw Error("INSUFFICIENT_ROWS", "fewer rows than retained regressors");

  FitResult fit;
  split_names(x, kept, fit);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double c = xk(0, j);
    if (c != 0.0 && (xk.col(j).array() == c).all()) {
      beta[j] = std::log(y.mean() + 0.1) / c;
      break;
    }
  }

  constexpr int kMaxIter = 50;
  constexpr double kDevTol = 1e-10;
  constexpr double kScoreTol = 1e-6;
  constexpr double kDiverged = 1e6;

  Eigen::VectorXd eta = xk * beta;
  Eigen::VectorXd mu = eta.array().exp();
  double dev = poisson_deviance(y, mu);
  bool converged = false;
  int iter = 0;
  while (iter < kMaxIter) {
    ++iter;
    const Eigen::VectorXd z = eta.array() + (y - mu).array() / mu.array();
    const Eigen::VectorXd sw = mu.array().sqrt();
    const Eigen::MatrixXd xw = sw.asDiagonal() * xk;
    Eigen::VectorXd next = xw.householderQr().solve(sw.cwiseProduct(z));
    if (!next.allFinite() || next.cwiseAbs().maxCoeff() > kDiverged)
      throw Error("SEPARATION", "coefficients diverge; counts are perfectly separated");

    Eigen::VectorXd next_eta = xk * next;
    Eigen::VectorXd next_mu = next_eta.array().exp();
    double next_dev = poisson_deviance(y, next_mu);
    // Step halving guards against overshooting from poor starting values.
    for (int half = 0; half < 30 && !(next_dev <= dev + 1e-12 * std::abs(dev)); ++half) {
      next = 0.5 * (next + beta);
      next_eta = xk * next;
      next_mu = next_eta.array().exp();
      next_dev = poisson_deviance(y, next_mu);
    }
    const double change = std::abs(next_dev - dev);
    beta = next;
    eta = next_eta;
    mu = next_mu;
    dev = next_dev;
    const double score = (xk.transpose() * (y - mu)).cwiseAbs().maxCoeff();
    if (change < kDevTol && score < kScoreTol) {
      converged = true;
      break;
    }
  }
  // Zero counts driven towards a fitted mean of zero indicate separation; the
  // score criterion is met long before eta diverges.
  const double floor_mu = 1e-5 * y.mean();
  for (Eigen::Index i = 0; i < n; ++i)
    if (y[i] == 0.0 && mu[i] < floor_mu)
      throw Error("SEPARATION", "fitted means collapse to zero for some observations");
  if (!converged) throw Error("NO_CONVERGENCE", "IRLS did not converge in 50 iterations");

  fit.coefficients = beta;
  fit.residuals = y - mu;
  fit.scores = fit.residuals.asDiagonal() * xk;
  fit.hessian = xk.transpose() * mu.asDiagonal() * xk;
  fit.dof_residual = static_cast<long>(n - k);
  fit.small_sample_k = static_cast<long>(k);
  fit.log_likelihood = poisson_log_likelihood(xk, y, beta);
  fit.iterations = iter;
  return fit;
}

}  // namespace didkit
