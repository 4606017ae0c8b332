#include "didkit/csdid.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <set>

#include "didkit/error.hpp"
#include "didkit/regress.hpp"
#include "didkit/rng.hpp"
#include "didkit/stats.hpp"

namespace didkit {

std::vector<int> CsSample::cohorts() const {
  std::set<int> s;
  for (const auto& c : cohort)
    if (c) s.insert(*c);
  return {s.begin(), s.end()};
}

long CsSample::cohort_size(int g) const {
  return std::count_if(cohort.begin(), cohort.end(),
                       [g](const auto& c) { return c.has_value() && *c == g; });
}

CsSample prepare_cs_sample(const PanelDataset& ds, const std::string& outcome,
                           const std::vector<std::string>& covariates) {
  require_valid(ds, {covariates, false});
  const PanelDataset cc = complete_cases(ds, outcome);
  const auto schedule = schedule_of(cc);
  const auto grid = grid_of(cc);
  const auto& y = cc.column(outcome);
  std::vector<std::vector<double>> cov;
  for (const auto& name : covariates) cov.push_back(unit_values(cc, name));

  CsSample s;
  s.outcome = outcome;
  s.periods = cc.periods;
  s.covariate_names = covariates;
  std::vector<std::size_t> keep;
  for (std::size_t u = 0; u < cc.n_units(); ++u) {
    const auto g = cohort_period(cc.periods, schedule.first_treated[u]);
    if (g && *g == cc.periods.front()) {
      ++s.n_already_treated;
      continue;
    }
    if (std::any_of(cov.begin(), cov.end(), [u](const auto& c) { return std::isnan(c[u]); })) {
      ++s.n_missing_covariates;
      continue;
    }
    keep.push_back(u);
    s.cohort.push_back(g);
  }
  if (keep.empty()) throw Error("EMPTY_RESULT", "no units left for group-time estimation");

  const auto n = static_cast<Eigen::Index>(keep.size());
  const auto n_t = static_cast<Eigen::Index>(cc.periods.size());
  s.y.resize(n, n_t);
  s.covariates.resize(n, static_cast<Eigen::Index>(cov.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t u = keep[i];
    s.units.push_back(cc.units[u]);
    s.source_unit.push_back(*ds.find_unit(cc.units[u]));
    for (Eigen::Index t = 0; t < n_t; ++t) s.y(i, t) = y[grid.at(u, t)];
    for (std::size_t c = 0; c < cov.size(); ++c) s.covariates(i, c) = cov[c][u];
  }
  return s;
}

namespace {

Eigen::Index index_of(const std::vector<int>& periods, int year) {
  auto it = std::find(periods.begin(), periods.end(), year);
  if (it == periods.end()) throw Error("UNKNOWN_PERIOD", "period " + std::to_string(year) + " not in sample");
  return it - periods.begin();
}

}  // namespace

GroupTimeCell att_gt(const CsSample& sample, int g, int t, CsMethod method) {
  const auto& periods = sample.periods;
  const Eigen::Index gi = index_of(periods, g);
  const Eigen::Index ti = index_of(periods, t);
  if (gi == 0) throw Error("NO_BASE_PERIOD", "cohort " + std::to_string(g) + " has no pre-period");
  const Eigen::Index bi = t >= g ? gi - 1 : ti - 1;
  if (bi < 0) throw Error("NO_BASE_PERIOD", "period " + std::to_string(t) + " has no base period");

  const Eigen::Index n = sample.n_units();
  std::vector<Eigen::Index> treated, control;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = sample.cohort[i];
    if (!c) control.push_back(i);
    else if (*c == g) treated.push_back(i);
  }
  if (control.empty()) throw Error("NO_NEVER_TREATED", "no never-treated units");
  if (treated.empty()) throw Error("EMPTY_COHORT", "no units in cohort " + std::to_string(g));

  const Eigen::VectorXd dy = sample.y.col(ti) - sample.y.col(bi);
  const double nn = static_cast<double>(n);
  const double n_g = static_cast<double>(treated.size());
  const double n_c = static_cast<double>(control.size());

  GroupTimeCell cell;
  cell.g = g;
  cell.t = t;
  cell.base = periods[bi];
  cell.n_treated = static_cast<long>(treated.size());
  cell.n_control = static_cast<long>(control.size());
  cell.influence = Eigen::VectorXd::Zero(n);

  const bool regress = method == CsMethod::outcome_regression && sample.covariates.cols() > 0;
  if (!regress) {
    double m_g = 0.0, m_c = 0.0;
    for (auto i : treated) m_g += dy[i];
    for (auto i : control) m_c += dy[i];
    m_g /= n_g;
    m_c /= n_c;
    cell.att = m_g - m_c;
    for (auto i : treated) cell.influence[i] = (dy[i] - m_g) * nn / n_g;
    for (auto i : control) cell.influence[i] = -(dy[i] - m_c) * nn / n_c;
  } else {
    const Eigen::Index p = sample.covariates.cols();
    std::vector<std::string> names{"(intercept)"};
    names.insert(names.end(), sample.covariate_names.begin(), sample.covariate_names.end());
    auto design_row = [&](Eigen::Index i) {
      Eigen::RowVectorXd r(p + 1);
      r[0] = 1.0;
      r.tail(p) = sample.covariates.row(i);
      return r;
    };
    Eigen::MatrixXd xc(static_cast<Eigen::Index>(control.size()), p + 1);
    Eigen::VectorXd yc(static_cast<Eigen::Index>(control.size()));
    for (std::size_t k = 0; k < control.size(); ++k) {
      xc.row(k) = design_row(control[k]);
      yc[k] = dy[control[k]];
    }
    const FitResult fit = ols(DesignMatrix(names, xc), yc);
    std::vector<Eigen::Index> kept;
    for (const auto& name : fit.names)
      kept.push_back(std::find(names.begin(), names.end(), name) - names.begin());
    auto reduced = [&](Eigen::Index i) {
      const Eigen::RowVectorXd full = design_row(i);
      Eigen::VectorXd r(static_cast<Eigen::Index>(kept.size()));
      for (std::size_t k = 0; k < kept.size(); ++k) r[k] = full[kept[k]];
      return r;
    };

    Eigen::VectorXd x_bar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kept.size()));
    double att = 0.0;
    std::vector<double> resid_g;
    for (auto i : treated) {
      const Eigen::VectorXd xi = reduced(i);
      const double r = dy[i] - xi.dot(fit.coefficients);
      resid_g.push_back(r);
      att += r;
      x_bar += xi;
    }
    att /= n_g;
    x_bar /= n_g;
    cell.att = att;
    for (std::size_t k = 0; k < treated.size(); ++k)
      cell.influence[treated[k]] = (resid_g[k] - att) * nn / n_g;
    const Eigen::VectorXd h = fit.hessian.ldlt().solve(x_bar);
    for (std::size_t k = 0; k < control.size(); ++k) {
      const Eigen::VectorXd xi = reduced(control[k]);
      cell.influence[control[k]] = -nn * h.dot(xi) * fit.residuals[static_cast<Eigen::Index>(k)];
    }
  }
  cell.se = std::sqrt(cell.influence.squaredNorm()) / nn;
  return cell;
}

std::vector<GroupTimeCell> all_att_gt(const CsSample& sample, CsMethod method) {
  std::vector<std::pair<int, int>> keys;
  for (int g : sample.cohorts())
    for (std::size_t t = 1; t < sample.periods.size(); ++t) keys.emplace_back(g, sample.periods[t]);
  if (keys.empty()) throw Error("NO_CELLS", "no treated cohorts in the sample");
  if (std::none_of(sample.cohort.begin(), sample.cohort.end(), [](const auto& c) { return !c; }))
    throw Error("NO_NEVER_TREATED", "no never-treated units");

  std::vector<GroupTimeCell> cells(keys.size());
  std::vector<std::exception_ptr> errors(keys.size());
  const long m = static_cast<long>(keys.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long c = 0; c < m; ++c) {
    try {
      cells[c] = att_gt(sample, keys[c].first, keys[c].second, method);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return cells;
}

AggregateEstimate combine_by_cohort(std::span<const double> estimates,
                                    std::span<const Eigen::VectorXd> influences,
                                    std::span<const int> cohort_of_term, const CsSample& sample) {
  const std::size_t m = estimates.size();
  const Eigen::Index n = sample.n_units();
  const double nn = static_cast<double>(n);
  std::vector<double> pi(m);
  double pi_sum = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    pi[j] = static_cast<double>(sample.cohort_size(cohort_of_term[j])) / nn;
    pi_sum += pi[j];
  }
  AggregateEstimate out;
  out.influence = Eigen::VectorXd::Zero(n);
  for (std::size_t j = 0; j < m; ++j) {
    const double w = pi[j] / pi_sum;
    out.estimate += w * estimates[j];
    out.influence += w * influences[j];
  }
  // Influence of the estimated cohort weights.
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = sample.cohort[i];
    double centered_total = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      centered_total += ((c && *c == cohort_of_term[j]) ? 1.0 : 0.0) - pi[j];
    double wif = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double own = ((c && *c == cohort_of_term[j]) ? 1.0 : 0.0) - pi[j];
      wif += (own / pi_sum - centered_total * pi[j] / (pi_sum * pi_sum)) * estimates[j];
    }
    out.influence[i] += wif;
  }
  out.se = std::sqrt(out.influence.squaredNorm()) / nn;
  return out;
}

AggregateEstimate aggregate_overall(std::span<const GroupTimeCell> cells, const CsSample& sample) {
  std::map<int, std::vector<const GroupTimeCell*>> by_cohort;
  for (const auto& c : cells)
    if (c.t >= c.g) by_cohort[c.g].push_back(&c);
  if (by_cohort.empty()) throw Error("NO_CELLS", "no post-treatment cells to aggregate");

  std::vector<double> theta;
  std::vector<Eigen::VectorXd> infl;
  std::vector<int> groups;
  for (const auto& [g, list] : by_cohort) {
    double est = 0.0;
    Eigen::VectorXd f = Eigen::VectorXd::Zero(sample.n_units());
    for (const auto* c : list) {
      est += c->att;
      f += c->influence;
    }
    const double k = static_cast<double>(list.size());
    theta.push_back(est / k);
    infl.push_back(f / k);
    groups.push_back(g);
  }
  return combine_by_cohort(theta, infl, groups, sample);
}

double overall_from_cells(const std::vector<std::pair<std::pair<int, int>, double>>& cells,
                          const std::vector<std::pair<int, double>>& cohort_weights) {
  std::map<int, std::pair<double, int>> by_cohort;
  for (const auto& [key, value] : cells) {
    if (key.second < key.first) continue;
    auto& acc = by_cohort[key.first];
    acc.first += value;
    acc.second += 1;
  }
  double total = 0.0, weight = 0.0;
  for (const auto& [g, w] : cohort_weights) {
    auto it = by_cohort.find(g);
    if (it == by_cohort.end() || w <= 0.0) continue;
    total += w * it->second.first / it->second.second;
    weight += w;
  }
  if (weight == 0.0) throw Error("NO_CELLS", "no weighted post-treatment cells");
  return total / weight;
}

namespace {

constexpr double kIqrToSigma = 1.3489795003921634;  // qnorm(0.75) - qnorm(0.25)

void check_bootstrap(const Eigen::MatrixXd& influence, int reps) {
  if (reps < 99) throw Error("BAD_BOOTSTRAP", "multiplier bootstrap needs at least 99 replications");
  if (influence.size() == 0 || (influence.array() == 0.0).all())
    throw Error("DEGENERATE_INFLUENCE", "influence functions are identically zero");
}

// One replication: sqrt(n) * mean_i(v_i * IF_i) per column.
void replicate(const Eigen::MatrixXd& influence, std::uint64_t seed, int b, double* out) {
  auto rng = stream_rng(seed, static_cast<std::uint64_t>(b));
  const Eigen::Index n = influence.rows();
  const Eigen::Index k = influence.cols();
  std::vector<double> acc(static_cast<std::size_t>(k), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = mammen_draw(rng);
    for (Eigen::Index j = 0; j < k; ++j) acc[j] += v * influence(i, j);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (Eigen::Index j = 0; j < k; ++j) out[j] = acc[j] * scale;
}

BootstrapResult summarize(const Eigen::MatrixXd& draws, Eigen::Index n) {
  const Eigen::Index reps = draws.rows();
  const Eigen::Index k = draws.cols();
  BootstrapResult out;
  std::vector<double> sigma(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) {
    std::vector<double> col(draws.col(j).data(), draws.col(j).data() + reps);
    std::sort(col.begin(), col.end());
    sigma[j] = (quantile_sorted(col, 0.75) - quantile_sorted(col, 0.25)) / kIqrToSigma;
    if (!(sigma[j] > 1e-7)) sigma[j] = 0.0;
    out.se.push_back(sigma[j] / std::sqrt(static_cast<double>(n)));
  }
  std::vector<double> sup(static_cast<std::size_t>(reps), 0.0);
  for (Eigen::Index b = 0; b < reps; ++b)
    for (Eigen::Index j = 0; j < k; ++j)
      if (sigma[j] > 0.0) sup[b] = std::max(sup[b], std::abs(draws(b, j)) / sigma[j]);
  out.critical = quantile(sup, 0.95);
  return out;
}

}  // namespace

BootstrapResult multiplier_bootstrap(const Eigen::MatrixXd& influence, int reps,
                                     std::uint64_t seed) {
  check_bootstrap(influence, reps);
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor draws(reps, influence.cols());
#pragma omp parallel for schedule(static)
  for (int b = 0; b < reps; ++b) replicate(influence, seed, b, draws.row(b).data());
  return summarize(draws, influence.rows());
}

BootstrapResult multiplier_bootstrap_serial(const Eigen::MatrixXd& influence, int reps,
                                            std::uint64_t seed) {
  check_bootstrap(influence, reps);
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor draws(reps, influence.cols());
  for (int b = 0; b < reps; ++b) replicate(influence, seed, b, draws.row(b).data());
  return summarize(draws, influence.rows());
}

EventStudySeries aggregate_event_study(std::span<const GroupTimeCell> cells,
                                       const CsSample& sample, const BootstrapOptions& options) {
  std::map<int, std::vector<const GroupTimeCell*>> by_e;
  for (const auto& c : cells) by_e[c.t - c.g].push_back(&c);
  if (by_e.empty()) throw Error("NO_CELLS", "no cells to aggregate");

  EventStudySeries series;
  Eigen::MatrixXd infl(sample.n_units(), static_cast<Eigen::Index>(by_e.size()));
  Eigen::Index col = 0;
  for (const auto& [e, list] : by_e) {
    std::vector<double> est;
    std::vector<Eigen::VectorXd> f;
    std::vector<int> groups;
    for (const auto* c : list) {
      est.push_back(c->att);
      f.push_back(c->influence);
      groups.push_back(c->g);
    }
    const auto agg = combine_by_cohort(est, f, groups, sample);
    EventStudyPoint p;
    p.event_time = e;
    p.estimate = agg.estimate;
    p.analytic_se = agg.se;
    series.points.push_back(p);
    infl.col(col++) = agg.influence;
  }

  const auto boot = multiplier_bootstrap(infl, options.reps, options.seed);
  constexpr double z = 1.959963984540054;
  series.sup_t_critical = boot.critical;
  series.band_critical = std::max(boot.critical, z);
  for (std::size_t j = 0; j < series.points.size(); ++j) {
    auto& p = series.points[j];
    p.se = boot.se[j];
    p.lo95 = p.estimate - z * p.se;
    p.hi95 = p.estimate + z * p.se;
    p.band_lo = p.estimate - series.band_critical * p.se;
    p.band_hi = p.estimate + series.band_critical * p.se;
  }
  return series;
}

double clustered_if_se(const Eigen::VectorXd& influence, std::span<const int> cluster) {
  if (static_cast<Eigen::Index>(cluster.size()) != influence.size())
    throw Error("MISSING_CLUSTERS", "one cluster code per unit required");
  std::map<int, double> sums;
  for (Eigen::Index i = 0; i < influence.size(); ++i) sums[cluster[i]] += influence[i];
  const double g = static_cast<double>(sums.size());
  if (g < 2) throw Error("MISSING_CLUSTERS", "need at least two clusters");
  double ss = 0.0;
  for (const auto& [c, s] : sums) ss += s * s;
  return std::sqrt(ss * g / (g - 1.0)) / static_cast<double>(influence.size());
}

std::vector<EstimateRow> estimate_cs(const PanelDataset& ds, const std::string& outcome,
                                     const std::vector<std::string>& covariates,
                                     std::span<const VcovSpec> vcovs) {
  const CsSample sample = prepare_cs_sample(ds, outcome, covariates);
  const CsMethod method = covariates.empty() ? CsMethod::simple : CsMethod::outcome_regression;
  const auto cells = all_att_gt(sample, method);
  const auto overall = aggregate_overall(cells, sample);

  std::vector<EstimateRow> rows;
  for (const auto& spec : vcovs) {
    double se = overall.se;
    if (spec.scheme == VcovScheme::conley) continue;
    if (spec.scheme == VcovScheme::cluster && spec.cluster_label != "unit") {
      const auto& col = ds.label_column(spec.cluster_label);
      const auto firsts = first_rows(ds);
      std::vector<std::string> labels;
      for (auto u : sample.source_unit) labels.push_back(col[firsts[u]]);
      se = clustered_if_se(overall.influence, Factor::from_labels(labels).codes);
    }
    rows.push_back(make_estimate_row(outcome, "cs", spec.name(), overall.estimate, se,
                                     sample.n_obs(), sample.mean_outcome()));
  }
  return rows;
}

}  // namespace didkit
