#include "didkit/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <set>

#include <Eigen/Dense>

#include "didkit/csdid.hpp"
#include "didkit/error.hpp"
#include "didkit/rng.hpp"
#include "didkit/spatial.hpp"
#include "didkit/twfe.hpp"

namespace didkit {

EffectFn constant_effect(double tau) {
  return [tau](int, int) { return tau; };
}

EffectFn event_linear_effect(double intercept, double slope_per_year) {
  return [=](int g, int t) { return intercept + slope_per_year * (t - g); };
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

void check_config(const DgpConfig& cfg) {
  if (cfg.n_units < 1) throw Error("BAD_CONFIG", "n_units must be positive");
  if (cfg.periods.size() < 2) throw Error("BAD_CONFIG", "need at least two periods");
  if (!std::is_sorted(cfg.periods.begin(), cfg.periods.end()) ||
      std::adjacent_find(cfg.periods.begin(), cfg.periods.end()) != cfg.periods.end())
    throw Error("BAD_CONFIG", "periods must be strictly ascending");
  if (cfg.noise_sd < 0.0 || cfg.unit_fx_sd < 0.0) throw Error("BAD_CONFIG", "negative scale");
  if (!cfg.period_fx.empty() && cfg.period_fx.size() != cfg.periods.size())
    throw Error("BAD_CONFIG", "period_fx needs one value per period");
  const double s2 = cfg.selection_on_level * cfg.selection_on_level +
                    cfg.selection_on_covariate * cfg.selection_on_covariate;
  if (s2 > 1.0) throw Error("BAD_CONFIG", "selection loadings must satisfy a^2 + b^2 <= 1");
  if (cfg.cohort_shares.empty()) throw Error("BAD_SHARES", "no cohort shares");
  double total = 0.0;
  std::set<std::optional<int>> seen;
  for (const auto& [g, w] : cfg.cohort_shares) {
    if (!(w >= 0.0)) throw Error("BAD_SHARES", "cohort shares must be non-negative");
    if (g && !std::binary_search(cfg.periods.begin(), cfg.periods.end(), *g))
      throw Error("BAD_SHARES", "cohort " + std::to_string(*g) + " is not a panel period");
    if (!seen.insert(g).second) throw Error("BAD_SHARES", "cohort listed twice");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("BAD_SHARES", "cohort shares must sum to 1");
}

}  // namespace

SimulatedPanel simulate_panel(const DgpConfig& cfg) {
  check_config(cfg);
  auto rng = stream_rng(cfg.seed, 0);
  const long n = cfg.n_units;
  const auto n_t = static_cast<long>(cfg.periods.size());

  // Earliest cohort first, never treated last: high latent index -> early.
  auto shares = cfg.cohort_shares;
  std::sort(shares.begin(), shares.end(), [](const auto& a, const auto& b) {
    if (a.first.has_value() != b.first.has_value()) return a.first.has_value();
    return a.first < b.first;
  });

  std::vector<double> alpha(n), x(n), lat(n), lon(n);
  std::vector<std::optional<int>> cohort(n);
  const double sel_a = cfg.selection_on_level;
  const double sel_x = cfg.selection_on_covariate;
  const double idio = std::sqrt(std::max(0.0, 1.0 - sel_a * sel_a - sel_x * sel_x));
  for (long i = 0; i < n; ++i) {
    const double a0 = standard_normal(rng);
    alpha[i] = cfg.unit_fx_sd * a0;
    x[i] = standard_normal(rng);
    const double z = sel_a * a0 + sel_x * x[i] + idio * standard_normal(rng);
    const double u = 1.0 - normal_cdf(z);
    double cum = 0.0;
    cohort[i] = shares.back().first;
    for (const auto& [g, w] : shares) {
      cum += w;
      if (u < cum) {
        cohort[i] = g;
        break;
      }
    }
    lat[i] = 54.6 + 3.1 * uniform01(rng);
    lon[i] = 8.1 + 4.5 * uniform01(rng);
  }

  std::vector<double> period_fx = cfg.period_fx;
  if (period_fx.empty())
    for (long t = 0; t < n_t; ++t) period_fx.push_back(0.1 * static_cast<double>(t));

  Eigen::MatrixXd noise(n, n_t);
  if (cfg.spatial_range_km > 0.0) {
    Eigen::MatrixXd cov(n, n);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < n; ++j)
        cov(i, j) = std::exp(-great_circle_km({lat[i], lon[i]}, {lat[j], lon[j]}) /
                             cfg.spatial_range_km);
    cov.diagonal().array() += 1e-10;
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw Error("BAD_CONFIG", "spatial covariance not PD");
    for (long t = 0; t < n_t; ++t) {
      Eigen::VectorXd z(n);
      for (long i = 0; i < n; ++i) z[i] = standard_normal(rng);
      noise.col(t) = llt.matrixL() * z;
    }
  } else {
    for (long i = 0; i < n; ++i)
      for (long t = 0; t < n_t; ++t) noise(i, t) = standard_normal(rng);
  }

  SimulatedPanel out;
  PanelDataset& ds = out.panel;
  ds.periods = cfg.periods;
  auto& county = ds.labels["county"];
  auto& hundred = ds.labels["hundred"];
  auto& y = ds.values["y"];
  auto& x1 = ds.values["x1"];
  const double lat_lo = 54.6, lat_span = 3.1;
  for (long i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "u%06ld", i + 1);
    ds.units.emplace_back(id);
    const int c = std::min(cfg.n_counties - 1,
                           static_cast<int>((lat[i] - lat_lo) / lat_span * cfg.n_counties));
    const int h = std::min(3, static_cast<int>((lon[i] - 8.1) / 4.5 * 4.0));
    for (long t = 0; t < n_t; ++t) {
      const int year = cfg.periods[t];
      double v = alpha[i] + period_fx[t] + cfg.covariate_trend * x[i] * static_cast<double>(t) +
                 cfg.noise_sd * noise(i, t);
      if (cohort[i] && year >= *cohort[i]) v += cfg.effect(*cohort[i], year);
      ds.rows.push_back({static_cast<std::size_t>(i), year, cohort[i]});
      ds.lat.push_back(lat[i]);
      ds.lon.push_back(lon[i]);
      county.push_back("C" + std::to_string(c + 1));
      hundred.push_back("H" + std::to_string(c + 1) + "-" + std::to_string(h + 1));
      y.push_back(v);
      x1.push_back(x[i]);
    }
  }

  TruthRecord& truth = out.truth;
  std::vector<std::pair<std::pair<int, int>, double>> cells;
  for (const auto& [g, w] : cfg.cohort_shares) {
    if (!g || *g == cfg.periods.front() || w <= 0.0) continue;
    truth.cohort_weights.emplace_back(*g, w);
    for (std::size_t t = 1; t < cfg.periods.size(); ++t) {
      const int year = cfg.periods[t];
      const double v = year >= *g ? cfg.effect(*g, year) : 0.0;
      truth.att[{*g, year}] = v;
      cells.push_back({{*g, year}, v});
    }
  }
  std::sort(truth.cohort_weights.begin(), truth.cohort_weights.end());
  if (!cells.empty()) {
    truth.overall = overall_from_cells(cells, truth.cohort_weights);
    std::map<int, std::pair<double, double>> by_e;
    for (const auto& [key, v] : truth.att) {
      double w = 0.0;
      for (const auto& [g, share] : truth.cohort_weights)
        if (g == key.first) w = share;
      auto& acc = by_e[key.second - key.first];
      acc.first += w * v;
      acc.second += w;
    }
    for (const auto& [e, acc] : by_e) truth.event_study[e] = acc.first / acc.second;
  }
  return out;
}

double did_2x2_oracle(const PanelDataset& ds, const std::string& outcome, int g, int t, int base) {
  const auto& y = ds.values.at(outcome);
  const int last = ds.periods.back();
  // Per unit: group code and the outcome at t and base.
  std::vector<int> group(ds.units.size(), 0);  // 1 = cohort g, 2 = never, 0 = other
  std::vector<double> at_t(ds.units.size(), std::nan("")), at_b(ds.units.size(), std::nan(""));
  for (std::size_t r = 0; r < ds.rows.size(); ++r) {
    const auto& row = ds.rows[r];
    if (!row.treatment_year || *row.treatment_year > last) {
      group[row.unit] = 2;
    } else {
      int first = 0;
      for (int p : ds.periods) {
        if (p >= *row.treatment_year) {
          first = p;
          break;
        }
      }
      group[row.unit] = first == g ? 1 : 0;
    }
    if (row.year == t) at_t[row.unit] = y[r];
    if (row.year == base) at_b[row.unit] = y[r];
  }
  double sum[3][2] = {{0, 0}, {0, 0}, {0, 0}};
  double count[3] = {0, 0, 0};
  for (std::size_t u = 0; u < ds.units.size(); ++u) {
    if (group[u] == 0 || std::isnan(at_t[u]) || std::isnan(at_b[u])) continue;
    sum[group[u]][0] += at_t[u];
    sum[group[u]][1] += at_b[u];
    count[group[u]] += 1;
  }
  if (count[1] == 0 || count[2] == 0)
    throw Error("EMPTY_GROUP", "cohort or never-treated group is empty");
  const double treated_change = sum[1][0] / count[1] - sum[1][1] / count[1];
  const double control_change = sum[2][0] / count[2] - sum[2][1] / count[2];
  return treated_change - control_change;
}

std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t rep) {
  auto rng = stream_rng(seed, rep + 1);
  return rng();
}

McReport monte_carlo(const McEstimator& estimator, const DgpConfig& cfg, int reps,
                     std::uint64_t seed) {
  if (reps < 1) throw Error("BAD_CONFIG", "reps must be positive");
  check_config(cfg);
  McReport report;
  report.reps = reps;
  report.draws.resize(static_cast<std::size_t>(reps));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(reps));
#pragma omp parallel for schedule(dynamic, 1)
  for (int r = 0; r < reps; ++r) {
    try {
      DgpConfig c = cfg;
      c.seed = replication_seed(seed, static_cast<std::uint64_t>(r));
      report.draws[r] = estimator(simulate_panel(c));
    } catch (...) {
      errors[r] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  const double k = static_cast<double>(reps);
  double est = 0.0, truth = 0.0, err = 0.0;
  for (const auto& d : report.draws) {
    est += d.estimate;
    truth += d.truth;
    err += d.estimate - d.truth;
  }
  report.mean_estimate = est / k;
  report.truth = truth / k;
  report.bias = err / k;
  if (reps >= 2) {
    double ss = 0.0, sq = 0.0, covered = 0.0;
    for (const auto& d : report.draws) {
      const double e = d.estimate - d.truth;
      ss += (e - report.bias) * (e - report.bias);
      sq += e * e;
      if (std::abs(e) <= 1.959963984540054 * d.se) covered += 1.0;
    }
    report.mc_se = std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
    report.rmse = std::sqrt(sq / k);
    report.coverage = covered / k;
  }
  return report;
}

McEstimator cs_overall_estimator(const std::vector<std::string>& covariates) {
  return [covariates](const SimulatedPanel& sim) {
    const auto sample = prepare_cs_sample(sim.panel, "y", covariates);
    const auto method = covariates.empty() ? CsMethod::simple : CsMethod::outcome_regression;
    const auto cells = all_att_gt(sample, method);
    const auto overall = aggregate_overall(cells, sample);
    return McDraw{overall.estimate, overall.se, sim.truth.overall};
  };
}

McEstimator twfe_estimator() {
  return [](const SimulatedPanel& sim) {
    ControlSpec controls;
    controls.none = true;
    const auto row = estimate_twfe(sim.panel, "y", controls, VcovSpec::cluster("unit"));
    return McDraw{row.estimate, row.se, sim.truth.overall};
  };
}

}  // namespace didkit
