#include "didkit/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "didkit/csdid.hpp"
#include "didkit/csv.hpp"
#include "didkit/diagnostics.hpp"
#include "didkit/error.hpp"
#include "didkit/microdata.hpp"
#include "didkit/regress.hpp"
#include "didkit/spatial.hpp"
#include "didkit/twfe.hpp"

namespace didkit {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::ofstream open_output(const fs::path& dir, const std::string& name, CommandResult& result) {
  fs::create_directories(dir);
  const auto path = dir / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IO_ERROR", "cannot write " + path.string());
  result.written.push_back(path);
  return out;
}

fs::path required_path(const Config& cfg, const fs::path& p, const std::string& key) {
  if (p.empty()) throw Error("CONFIG_ERROR", "data." + key + " is required");
  return cfg.resolve(p);
}

PanelDataset load_panel(const Config& cfg) {
  return read_panel_csv(required_path(cfg, cfg.data.panel, "panel"));
}

std::string fmt(double v) { return format_double(v); }

ordered_json number_or_null(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

// Re-raises an error with the outcome it came from.
template <typename F>
auto with_outcome(const std::string& outcome, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), "outcome '" + outcome + "': " + e.message());
  }
}

void require_outcomes(const Config& cfg, const PanelDataset& ds) {
  if (cfg.outcomes.empty()) throw Error("CONFIG_ERROR", "no outcomes configured");
  for (const auto& o : cfg.outcomes)
    if (!ds.has_column(o)) throw Error("SCHEMA_ERROR", "unknown outcome column '" + o + "'");
}

ValidationOptions validation_options(const Config& cfg) {
  ValidationOptions options;
  std::set<std::string> covs(cfg.covariates.begin(), cfg.covariates.end());
  if (!cfg.controls.none)
    covs.insert(cfg.controls.decile_vars.begin(), cfg.controls.decile_vars.end());
  options.covariates.assign(covs.begin(), covs.end());
  for (const auto& v : cfg.vcov)
    if (v.scheme == VcovScheme::conley) options.require_coords = true;
  return options;
}

ordered_json finding_json(const Finding& f) {
  ordered_json j;
  j["code"] = f.code;
  j["unit"] = f.unit;
  j["period"] = f.period ? ordered_json(*f.period) : ordered_json(nullptr);
  j["message"] = f.message;
  return j;
}

// ---------------------------------------------------------------- cross section

struct CrossRow {
  std::string term;
  double estimate = 0.0;
  double se = 0.0;
  std::string vcov;
  long n_obs = 0;
};

std::vector<CrossRow> run_cross_section(const PanelDataset& ds, const CrossSectionConfig& cs) {
  const int period = cs.period.value_or(ds.periods.front());
  const auto p = period_index(ds, period);
  const auto grid = grid_of(ds);
  const auto& y = ds.column(cs.outcome);
  std::vector<const std::vector<double>*> regs;
  for (const auto& r : cs.regressors) regs.push_back(&ds.column(r));

  // Observations: units, or groups of units sharing `aggregate_by`.
  std::vector<std::string> group_label;
  std::vector<long> group_of_unit(ds.n_units(), -1);
  if (!cs.aggregate_by.empty()) {
    const auto labels = unit_labels(ds, cs.aggregate_by);
    std::map<std::string, long> index;
    for (std::size_t u = 0; u < ds.n_units(); ++u) {
      auto [it, fresh] = index.emplace(labels[u], static_cast<long>(group_label.size()));
      if (fresh) group_label.push_back(labels[u]);
      group_of_unit[u] = it->second;
    }
  } else {
    for (std::size_t u = 0; u < ds.n_units(); ++u) {
      group_of_unit[u] = static_cast<long>(u);
      group_label.push_back(ds.units[u]);
    }
  }
  const auto n_groups = group_label.size();
  const auto k = cs.regressors.size();
  std::vector<double> ysum(n_groups, 0.0), count(n_groups, 0.0);
  std::vector<std::vector<double>> xsum(n_groups, std::vector<double>(k, 0.0));
  std::vector<long> first_row(n_groups, -1);
  for (std::size_t u = 0; u < ds.n_units(); ++u) {
    const long r = grid.at(u, p);
    if (r < 0 || std::isnan(y[r])) continue;
    bool ok = true;
    for (std::size_t j = 0; j < k; ++j) ok = ok && !std::isnan((*regs[j])[r]);
    if (!ok) continue;
    const auto g = static_cast<std::size_t>(group_of_unit[u]);
    ysum[g] += y[r];
    count[g] += 1;
    for (std::size_t j = 0; j < k; ++j) xsum[g][j] += (*regs[j])[r];
    if (first_row[g] < 0) first_row[g] = r;
  }
  std::vector<std::size_t> used;
  for (std::size_t g = 0; g < n_groups; ++g)
    if (count[g] > 0) used.push_back(g);
  const auto n = static_cast<Eigen::Index>(used.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(k + 1));
  Eigen::VectorXd yy(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto g = used[i];
    yy[i] = ysum[g];
    x(i, 0) = 1.0;
    for (std::size_t j = 0; j < k; ++j)
      x(i, static_cast<Eigen::Index>(j + 1)) = xsum[g][j] / count[g];
  }
  std::vector<std::string> names{"intercept"};
  names.insert(names.end(), cs.regressors.begin(), cs.regressors.end());
  const DesignMatrix design(names, x);
  const FitResult fit = cs.model == CrossModel::poisson ? poisson_fit(design, yy) : ols(design, yy);

  std::vector<std::size_t> rows;
  for (auto g : used) rows.push_back(static_cast<std::size_t>(first_row[g]));
  std::vector<CrossRow> out;
  for (const auto& spec : cs.vcov) {
    VcovData data;
    if (spec.scheme == VcovScheme::cluster && !cs.aggregate_by.empty() &&
        spec.cluster_label == cs.aggregate_by) {
      for (Eigen::Index i = 0; i < n; ++i) data.cluster.push_back(static_cast<int>(i));
    } else {
      data = vcov_data_for_rows(ds, rows, spec);
    }
    const auto v = sandwich_vcov(fit, spec, data);
    const auto se = v.se();
    for (std::size_t j = 0; j < fit.names.size(); ++j)
      out.push_back({fit.names[j], fit.coefficients[static_cast<Eigen::Index>(j)],
                     se[static_cast<Eigen::Index>(j)], spec.name(), static_cast<long>(n)});
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- build-panel

PanelDataset assemble_panel(const Config& cfg, std::vector<std::string>& warnings) {
  const auto micro = read_micro_csv(required_path(cfg, cfg.data.micro, "micro"));
  warnings.insert(warnings.end(), micro.warnings.begin(), micro.warnings.end());
  const auto parishes = read_parish_csv(required_path(cfg, cfg.data.parishes, "parishes"));
  PanelDataset ds = build_panel(micro.records, parishes);
  const auto points = unit_points(ds);

  if (!cfg.data.anchors.empty()) {
    const auto table = read_csv(cfg.resolve(cfg.data.anchors));
    const auto c_name = table.column("name");
    const auto c_lat = table.column("lat");
    const auto c_lon = table.column("lon");
    std::vector<std::string> order;
    std::map<std::string, std::vector<GeoPoint>> paths;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto& row = table.rows[i];
      const std::string& name = row[c_name];
      if (name.empty())
        throw Error("PARSE_ERROR", table.source + ":" + std::to_string(table.lines[i]) +
                                       ": empty anchor name");
      GeoPoint pt{parse_double(row[c_lat], table.source, table.lines[i]),
                  parse_double(row[c_lon], table.source, table.lines[i])};
      if (!valid_point(pt))
        throw Error("PARSE_ERROR", table.source + ":" + std::to_string(table.lines[i]) +
                                       ": invalid coordinates");
      if (!paths.count(name)) order.push_back(name);
      paths[name].push_back(pt);
    }
    for (const auto& name : order) {
      auto& col = ds.values["dist_" + name];
      col.assign(ds.n_rows(), 0.0);
      std::vector<double> per_unit(ds.n_units());
      for (std::size_t u = 0; u < ds.n_units(); ++u)
        per_unit[u] = min_distance_to_path(points[u], paths[name]);
      for (std::size_t r = 0; r < ds.n_rows(); ++r) col[r] = per_unit[ds.rows[r].unit];
    }
  }

  if (!cfg.data.sites.empty()) {
    const auto table = read_csv(cfg.resolve(cfg.data.sites));
    const auto c_kind = table.column("kind");
    const auto c_lat = table.column("lat");
    const auto c_lon = table.column("lon");
    const auto c_year = table.column("opening_year");
    std::map<InstitutionKind, std::vector<InstitutionSite>> by_kind{
        {InstitutionKind::community_house, {}}, {InstitutionKind::folk_high_school, {}}};
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto& row = table.rows[i];
      InstitutionSite site;
      try {
        site.kind = parse_institution_kind(row[c_kind]);
      } catch (const Error& e) {
        throw Error("PARSE_ERROR",
                    table.source + ":" + std::to_string(table.lines[i]) + ": " + e.message());
      }
      site.location = {parse_double(row[c_lat], table.source, table.lines[i]),
                       parse_double(row[c_lon], table.source, table.lines[i])};
      const auto year = parse_optional_int(row[c_year], table.source, table.lines[i]);
      if (!year || !valid_point(site.location))
        throw Error("PARSE_ERROR", table.source + ":" + std::to_string(table.lines[i]) +
                                       ": site needs coordinates and an opening year");
      site.opening_year = static_cast<int>(*year);
      by_kind[site.kind].push_back(site);
    }
    std::vector<GeoPoint> origins;
    std::vector<int> years;
    for (const auto& row : ds.rows) {
      origins.push_back(points[row.unit]);
      years.push_back(row.year);
    }
    for (const auto& [kind, sites] : by_kind)
      ds.values["ma_" + to_string(kind)] = market_access_batch(origins, years, sites, cfg.floor_km);
  }
  return ds;
}

CommandResult cmd_build_panel(const Config& cfg, const fs::path& out_dir) {
  CommandResult result;
  const auto ds = assemble_panel(cfg, result.warnings);
  for (const auto& w : validate_panel(ds).warnings) result.warnings.push_back(w.code + ": " + w.message);
  auto out = open_output(out_dir, "panel.csv", result);
  write_panel_csv(ds, out);
  return result;
}

// ---------------------------------------------------------------- estimate

CommandResult cmd_estimate(const Config& cfg, const fs::path& out_dir) {
  CommandResult result;
  const auto ds = load_panel(cfg);
  require_outcomes(cfg, ds);
  require_valid(ds, validation_options(cfg));

  std::vector<EstimateRow> rows;
  for (const auto& outcome : cfg.outcomes) {
    with_outcome(outcome, [&] {
      for (const auto& est : cfg.estimators) {
        const auto part = est == "twfe" ? estimate_twfe(ds, outcome, cfg.controls, cfg.vcov)
                                        : estimate_cs(ds, outcome, cfg.covariates, cfg.vcov);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      return 0;
    });
  }
  for (const auto& est : cfg.estimators)
    if (est == "cs")
      for (const auto& v : cfg.vcov)
        if (v.scheme == VcovScheme::conley)
          result.warnings.push_back("conley variance is not available for the cs estimator; '" +
                                    v.name() + "' skipped");

  {
    auto csv = open_output(out_dir, "estimates.csv", result);
    write_csv_row(csv, {"outcome", "estimator", "vcov", "estimate", "se", "p_value", "stars",
                        "n_obs", "mean_outcome"});
    for (const auto& r : rows)
      write_csv_row(csv, {r.outcome, r.estimator, r.vcov, fmt(r.estimate), fmt(r.se),
                          fmt(r.p_value), r.stars, std::to_string(r.n_obs),
                          fmt(r.mean_outcome)});
  }
  ordered_json j = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json o;
    o["outcome"] = r.outcome;
    o["estimator"] = r.estimator;
    o["vcov"] = r.vcov;
    o["estimate"] = r.estimate;
    o["se"] = r.se;
    o["p_value"] = r.p_value;
    o["stars"] = r.stars;
    o["n_obs"] = r.n_obs;
    o["mean_outcome"] = r.mean_outcome;
    j.push_back(o);
  }
  {
    auto js = open_output(out_dir, "estimates.json", result);
    js << ordered_json{{"estimates", j}}.dump(2) << "\n";
  }

  if (!cfg.cross_sections.empty()) {
    auto csv = open_output(out_dir, "cross_section.csv", result);
    write_csv_row(csv, {"outcome", "model", "term", "vcov", "estimate", "se", "p_value", "stars",
                        "n_obs"});
    for (const auto& cs : cfg.cross_sections) {
      const auto part = with_outcome(cs.outcome, [&] { return run_cross_section(ds, cs); });
      for (const auto& r : part) {
        const double p = normal_p_value(r.estimate / r.se);
        write_csv_row(csv, {cs.outcome, cs.model == CrossModel::poisson ? "poisson" : "ols",
                            r.term, r.vcov, fmt(r.estimate), fmt(r.se), fmt(p), stars(p),
                            std::to_string(r.n_obs)});
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------- event-study

CommandResult cmd_event_study(const Config& cfg, const fs::path& out_dir) {
  CommandResult result;
  const auto ds = load_panel(cfg);
  require_outcomes(cfg, ds);
  require_valid(ds, validation_options(cfg));
  const CsMethod method = cfg.covariates.empty() ? CsMethod::simple : CsMethod::outcome_regression;

  struct Output {
    std::vector<GroupTimeCell> cells;
    EventStudySeries series;
  };
  std::vector<Output> outputs;
  for (const auto& outcome : cfg.outcomes) {
    outputs.push_back(with_outcome(outcome, [&] {
      const auto sample = prepare_cs_sample(ds, outcome, cfg.covariates);
      Output o;
      o.cells = all_att_gt(sample, method);
      o.series = aggregate_event_study(o.cells, sample, cfg.bootstrap);
      return o;
    }));
  }

  {
    auto csv = open_output(out_dir, "event_study.csv", result);
    write_csv_row(csv, {"outcome", "event_time", "estimate", "se", "lo95", "hi95", "band_lo",
                        "band_hi"});
    for (std::size_t i = 0; i < outputs.size(); ++i)
      for (const auto& p : outputs[i].series.points)
        write_csv_row(csv, {cfg.outcomes[i], std::to_string(p.event_time), fmt(p.estimate),
                            fmt(p.se), fmt(p.lo95), fmt(p.hi95), fmt(p.band_lo),
                            fmt(p.band_hi)});
  }
  {
    auto csv = open_output(out_dir, "group_time.csv", result);
    write_csv_row(csv, {"outcome", "g", "t", "base", "att", "se", "n_treated", "n_control"});
    for (std::size_t i = 0; i < outputs.size(); ++i)
      for (const auto& c : outputs[i].cells)
        write_csv_row(csv, {cfg.outcomes[i], std::to_string(c.g), std::to_string(c.t),
                            std::to_string(c.base), fmt(c.att), fmt(c.se),
                            std::to_string(c.n_treated), std::to_string(c.n_control)});
  }
  return result;
}

// ---------------------------------------------------------------- diagnostics

CommandResult cmd_diagnostics(const Config& cfg, const fs::path& out_dir) {
  CommandResult result;
  const auto& dc = cfg.diagnostics;
  if (dc.variables.empty()) {
    result.warnings.push_back("no diagnostics variables configured; nothing to do");
    return result;
  }
  const auto ds = load_panel(cfg);
  for (const auto& v : dc.variables)
    if (!ds.has_column(v)) throw Error("SCHEMA_ERROR", "unknown variable '" + v + "'");
  require_valid(ds);
  const int base = dc.base_period.value_or(ds.periods.front());
  const auto cross = base_cross_section(ds, base);
  if (cross.n_excluded_treated > 0)
    result.warnings.push_back(std::to_string(cross.n_excluded_treated) +
                              " units already treated in " + std::to_string(base) +
                              " excluded from base-period diagnostics");
  const auto schedule = schedule_of(ds);

  auto balance = open_output(out_dir, "balance.csv", result);
  write_csv_row(balance, {"variable", "base_period", "coef", "se", "p_value", "stars",
                          "n_treated", "n_control"});
  auto ks = open_output(out_dir, "ks.csv", result);
  write_csv_row(ks, {"variable", "base_period", "d", "p_value", "n_treated", "n_control"});
  auto density = open_output(out_dir, "density.csv", result);
  write_csv_row(density, {"variable", "group", "grid", "density"});

  for (const auto& var : dc.variables) {
    const auto& col = ds.column(var);
    std::vector<double> values, ever, never;
    for (std::size_t i = 0; i < cross.rows.size(); ++i) {
      const double v = col[cross.rows[i]];
      values.push_back(v);
      if (std::isnan(v)) continue;
      (cross.ever_treated[i] ? ever : never).push_back(v);
    }
    const auto b = balance_regression(values, cross.ever_treated);
    write_csv_row(balance, {var, std::to_string(base), fmt(b.coef), fmt(b.se), fmt(b.p_value),
                            b.stars, std::to_string(b.n_treated), std::to_string(b.n_control)});
    const auto k = ks_test(never, ever);
    write_csv_row(ks, {var, std::to_string(base), fmt(k.d), fmt(k.p_value),
                       std::to_string(ever.size()), std::to_string(never.size())});

    std::vector<std::pair<std::string, std::vector<double>>> groups{{"all", {}}};
    for (double v : values)
      if (!std::isnan(v)) groups[0].second.push_back(v);
    for (const auto& g : dc.groups) {
      std::vector<double> members;
      for (std::size_t i = 0; i < cross.units.size(); ++i) {
        const auto& first = schedule.first_treated[cross.units[i]];
        const bool in = g.never ? !first.has_value()
                                : first.has_value() && (!g.min_year || *first >= *g.min_year) &&
                                      (!g.max_year || *first <= *g.max_year);
        if (in && !std::isnan(values[i])) members.push_back(values[i]);
      }
      groups.emplace_back(g.label, std::move(members));
    }
    for (const auto& [label, members] : groups) {
      DensitySeries series;
      try {
        series = kde_export(members, dc.grid_size);
      } catch (const Error& e) {
        result.warnings.push_back("density of '" + var + "' for group '" + label +
                                  "' skipped: " + e.message());
        continue;
      }
      for (std::size_t i = 0; i < series.grid.size(); ++i)
        write_csv_row(density, {var, label, fmt(series.grid[i]), fmt(series.density[i])});
    }
  }

  auto summary = open_output(out_dir, "summary.csv", result);
  write_csv_row(summary, {"variable", "n", "mean", "sd", "min", "max"});
  for (const auto& s : summary_stats(ds, dc.variables)) {
    auto opt = [](std::optional<double> v) { return v ? fmt(*v) : std::string(); };
    write_csv_row(summary, {s.variable, std::to_string(s.n), opt(s.mean), opt(s.sd), opt(s.min),
                            opt(s.max)});
  }
  return result;
}

// ---------------------------------------------------------------- simulate

CommandResult cmd_simulate(const Config& cfg, const fs::path& out_dir) {
  CommandResult result;
  const auto& sc = cfg.simulate;
  if (sc.reps < 1) throw Error("CONFIG_ERROR", "simulate.reps must be at least 1");
  if (sc.reps < 50)
    result.warnings.push_back("fewer than 50 replications; Monte Carlo summaries are noisy");
  const auto reference = simulate_panel(sc.dgp);
  const auto& truth = reference.truth;

  ordered_json j;
  ordered_json config;
  config["n_units"] = sc.dgp.n_units;
  config["periods"] = sc.dgp.periods;
  config["reps"] = sc.reps;
  config["seed"] = sc.dgp.seed;
  config["noise_sd"] = sc.dgp.noise_sd;
  config["selection_on_level"] = sc.dgp.selection_on_level;
  config["selection_on_covariate"] = sc.dgp.selection_on_covariate;
  config["covariate_trend"] = sc.dgp.covariate_trend;
  config["spatial_range_km"] = sc.dgp.spatial_range_km;
  j["config"] = config;

  ordered_json t;
  t["overall"] = truth.att.empty() ? ordered_json(nullptr) : ordered_json(truth.overall);
  ordered_json cells = ordered_json::array();
  for (const auto& [key, v] : truth.att)
    cells.push_back({{"g", key.first}, {"t", key.second}, {"att", v}});
  t["att"] = cells;
  ordered_json es = ordered_json::array();
  for (const auto& [e, v] : truth.event_study) es.push_back({{"event_time", e}, {"att", v}});
  t["event_study"] = es;
  j["truth"] = t;

  ordered_json reports = ordered_json::object();
  if (!truth.att.empty()) {
    for (const auto& name : sc.estimators) {
      const auto estimator = name == "cs" ? cs_overall_estimator(sc.covariates) : twfe_estimator();
      const auto r = monte_carlo(estimator, sc.dgp, sc.reps, sc.dgp.seed);
      ordered_json o;
      o["reps"] = r.reps;
      o["mean_estimate"] = r.mean_estimate;
      o["truth"] = r.truth;
      o["bias"] = r.bias;
      o["mc_se"] = number_or_null(r.mc_se);
      o["rmse"] = number_or_null(r.rmse);
      o["coverage"] = number_or_null(r.coverage);
      if (r.mc_se && *r.mc_se > 0) o["bias_over_mc_se"] = r.bias / *r.mc_se;
      else o["bias_over_mc_se"] = nullptr;
      reports[name] = o;
    }
  } else {
    result.warnings.push_back("no treated cohorts; nothing to estimate");
  }
  j["estimators"] = reports;
  auto out = open_output(out_dir, "simulation.json", result);
  out << j.dump(2) << "\n";
  return result;
}

// ---------------------------------------------------------------- validate

CommandResult cmd_validate(const Config& cfg, const fs::path& out_dir) {
  CommandResult result;
  const auto ds = load_panel(cfg);
  auto options = validation_options(cfg);
  for (const auto& o : cfg.outcomes)
    if (!ds.has_column(o))
      throw Error("SCHEMA_ERROR", "unknown outcome column '" + o + "'");
  const auto report = validate_panel(ds, options);
  ordered_json j;
  j["ok"] = report.ok();
  j["n_units"] = ds.n_units();
  j["n_rows"] = ds.n_rows();
  j["periods"] = ds.periods;
  ordered_json errors = ordered_json::array(), warnings = ordered_json::array();
  for (const auto& f : report.errors) errors.push_back(finding_json(f));
  for (const auto& f : report.warnings) warnings.push_back(finding_json(f));
  j["errors"] = errors;
  j["warnings"] = warnings;
  auto out = open_output(out_dir, "validation.json", result);
  out << j.dump(2) << "\n";
  if (!report.ok()) result.exit_code = 2;
  return result;
}

}  // namespace didkit
