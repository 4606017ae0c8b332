#include "didkit/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "didkit/error.hpp"

namespace didkit {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("CONFIG_ERROR", message); }

void check_keys(const json& obj, const std::string& where, std::set<std::string> allowed) {
  if (!obj.is_object()) fail(where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) fail("unknown key '" + key + "' in " + where);
}

template <typename T>
T get(const json& obj, const std::string& key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail("bad value for '" + key + "' in " + where);
  }
}

std::vector<std::string> strings(const json& obj, const std::string& key, const std::string& where,
                                 std::vector<std::string> fallback = {}) {
  return get<std::vector<std::string>>(obj, key, where, std::move(fallback));
}

std::optional<int> optional_int(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  if (!obj.at(key).is_number_integer()) fail("'" + key + "' in " + where + " must be an integer");
  return obj.at(key).get<int>();
}

std::vector<VcovSpec> vcov_list(const json& obj, const std::string& key, const std::string& where,
                                std::vector<VcovSpec> fallback) {
  if (!obj.contains(key)) return fallback;
  std::vector<VcovSpec> out;
  for (const auto& text : strings(obj, key, where)) out.push_back(parse_vcov(text));
  if (out.empty()) fail("'" + key + "' in " + where + " is empty");
  return out;
}

EffectFn parse_effect(const json& e) {
  check_keys(e, "simulate.effect", {"type", "tau", "intercept", "slope_per_year"});
  const auto type = get<std::string>(e, "type", "simulate.effect", "constant");
  if (type == "constant") return constant_effect(get<double>(e, "tau", "simulate.effect", 0.07));
  if (type == "event_linear")
    return event_linear_effect(get<double>(e, "intercept", "simulate.effect", 0.0),
                               get<double>(e, "slope_per_year", "simulate.effect", 0.0));
  fail("unknown effect type '" + type + "'");
}

SimulateConfig parse_simulate(const json& s) {
  const std::string w = "simulate";
  check_keys(s, w,
             {"n_units", "periods", "cohort_shares", "effect", "unit_fx_sd", "period_fx",
              "noise_sd", "selection_on_level", "selection_on_covariate", "covariate_trend",
              "spatial_range_km", "n_counties", "seed", "reps", "estimators", "covariates"});
  SimulateConfig out;
  DgpConfig& d = out.dgp;
  d.n_units = get<long>(s, "n_units", w, d.n_units);
  d.periods = get<std::vector<int>>(s, "periods", w, d.periods);
  if (s.contains("cohort_shares")) {
    const auto& shares = s.at("cohort_shares");
    if (!shares.is_object()) fail("simulate.cohort_shares must map cohort -> share");
    d.cohort_shares.clear();
    for (const auto& [key, value] : shares.items()) {
      if (!value.is_number()) fail("cohort share for '" + key + "' must be a number");
      if (key == "never") {
        d.cohort_shares.emplace_back(std::nullopt, value.get<double>());
        continue;
      }
      int year = 0;
      std::istringstream in(key);
      if (!(in >> year) || !in.eof()) fail("cohort key '" + key + "' is not a year or 'never'");
      d.cohort_shares.emplace_back(year, value.get<double>());
    }
  }
  if (s.contains("effect")) d.effect = parse_effect(s.at("effect"));
  d.unit_fx_sd = get<double>(s, "unit_fx_sd", w, d.unit_fx_sd);
  d.period_fx = get<std::vector<double>>(s, "period_fx", w, d.period_fx);
  d.noise_sd = get<double>(s, "noise_sd", w, d.noise_sd);
  d.selection_on_level = get<double>(s, "selection_on_level", w, d.selection_on_level);
  d.selection_on_covariate = get<double>(s, "selection_on_covariate", w, d.selection_on_covariate);
  d.covariate_trend = get<double>(s, "covariate_trend", w, d.covariate_trend);
  d.spatial_range_km = get<double>(s, "spatial_range_km", w, d.spatial_range_km);
  d.n_counties = get<int>(s, "n_counties", w, d.n_counties);
  d.seed = get<std::uint64_t>(s, "seed", w, d.seed);
  out.reps = get<int>(s, "reps", w, out.reps);
  out.estimators = strings(s, "estimators", w, out.estimators);
  for (const auto& e : out.estimators)
    if (e != "cs" && e != "twfe") fail("unknown estimator '" + e + "'");
  out.covariates = strings(s, "covariates", w);
  return out;
}

DiagnosticsConfig parse_diagnostics(const json& s) {
  const std::string w = "diagnostics";
  check_keys(s, w, {"variables", "base_period", "grid_size", "groups"});
  DiagnosticsConfig out;
  out.variables = strings(s, "variables", w);
  out.base_period = optional_int(s, "base_period", w);
  out.grid_size = get<int>(s, "grid_size", w, out.grid_size);
  if (out.grid_size < 2) fail("diagnostics.grid_size must be at least 2");
  if (s.contains("groups")) {
    if (!s.at("groups").is_array()) fail("diagnostics.groups must be a list");
    for (const auto& g : s.at("groups")) {
      check_keys(g, "diagnostics.groups[]", {"label", "min_year", "max_year", "never"});
      CohortGroup group;
      group.label = get<std::string>(g, "label", "diagnostics.groups[]", "");
      if (group.label.empty()) fail("diagnostics group without label");
      group.min_year = optional_int(g, "min_year", "diagnostics.groups[]");
      group.max_year = optional_int(g, "max_year", "diagnostics.groups[]");
      group.never = get<bool>(g, "never", "diagnostics.groups[]", false);
      out.groups.push_back(group);
    }
  }
  return out;
}

CrossSectionConfig parse_cross_section(const json& s) {
  const std::string w = "cross_sections[]";
  check_keys(s, w, {"outcome", "regressors", "model", "period", "aggregate_by", "vcov"});
  CrossSectionConfig out;
  out.outcome = get<std::string>(s, "outcome", w, "");
  if (out.outcome.empty()) fail("cross section without outcome");
  out.regressors = strings(s, "regressors", w);
  const auto model = get<std::string>(s, "model", w, "ols");
  if (model == "ols") {
    out.model = CrossModel::ols;
  } else if (model == "poisson") {
    out.model = CrossModel::poisson;
  } else {
    fail("unknown cross-section model '" + model + "'");
  }
  out.period = optional_int(s, "period", w);
  out.aggregate_by = get<std::string>(s, "aggregate_by", w, "");
  out.vcov = vcov_list(s, "vcov", w, {VcovSpec::hc1()});
  return out;
}

}  // namespace

VcovSpec parse_vcov(const std::string& text) {
  if (text == "hc1") return VcovSpec::hc1();
  if (text.rfind("cluster:", 0) == 0) {
    const auto label = text.substr(8);
    if (label.empty()) fail("cluster vcov needs a label");
    return VcovSpec::cluster(label);
  }
  if (text.rfind("conley:", 0) == 0) {
    auto rest = text.substr(7);
    Kernel kernel = Kernel::uniform;
    if (const auto colon = rest.find(':'); colon != std::string::npos) {
      const auto k = rest.substr(colon + 1);
      if (k == "uniform") {
        kernel = Kernel::uniform;
      } else if (k == "bartlett") {
        kernel = Kernel::bartlett;
      } else {
        fail("unknown kernel '" + k + "'");
      }
      rest = rest.substr(0, colon);
    }
    if (rest.size() > 2 && rest.ends_with("km")) rest = rest.substr(0, rest.size() - 2);
    std::size_t used = 0;
    double cutoff = 0.0;
    try {
      cutoff = std::stod(rest, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != rest.size() || !(cutoff > 0.0))
      fail("bad conley cutoff in '" + text + "'");
    return VcovSpec::conley(cutoff, kernel);
  }
  fail("unknown vcov '" + text + "'");
}

std::filesystem::path Config::resolve(const std::filesystem::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return base_dir / p;
}

void Config::set_seed(std::uint64_t seed) {
  bootstrap.seed = seed;
  simulate.dgp.seed = seed;
}

Config parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(std::string("invalid JSON: ") + e.what());
  }
  check_keys(root, "config",
             {"data", "outcomes", "controls", "covariates", "estimators", "vcov", "bootstrap",
              "simulate", "diagnostics", "cross_sections", "spatial"});
  Config cfg;
  cfg.base_dir = base_dir;
  if (root.contains("data")) {
    const auto& d = root.at("data");
    check_keys(d, "data", {"panel", "micro", "parishes", "sites", "anchors"});
    cfg.data.panel = get<std::string>(d, "panel", "data", "");
    cfg.data.micro = get<std::string>(d, "micro", "data", "");
    cfg.data.parishes = get<std::string>(d, "parishes", "data", "");
    cfg.data.sites = get<std::string>(d, "sites", "data", "");
    cfg.data.anchors = get<std::string>(d, "anchors", "data", "");
  }
  cfg.outcomes = strings(root, "outcomes", "config");
  if (root.contains("controls")) {
    const auto& c = root.at("controls");
    if (c.is_string()) {
      if (c.get<std::string>() != "none") fail("controls must be an object or \"none\"");
      cfg.controls.none = true;
    } else {
      check_keys(c, "controls", {"none", "decile_vars", "county_label", "extra_regressors"});
      cfg.controls.none = get<bool>(c, "none", "controls", false);
      cfg.controls.decile_vars = strings(c, "decile_vars", "controls");
      cfg.controls.county_label = get<std::string>(c, "county_label", "controls", "county");
      cfg.controls.extra_regressors = strings(c, "extra_regressors", "controls");
    }
  }
  cfg.covariates = strings(root, "covariates", "config");
  cfg.estimators = strings(root, "estimators", "config", cfg.estimators);
  for (const auto& e : cfg.estimators)
    if (e != "cs" && e != "twfe") fail("unknown estimator '" + e + "'");
  cfg.vcov = vcov_list(root, "vcov", "config", cfg.vcov);
  if (root.contains("bootstrap")) {
    const auto& b = root.at("bootstrap");
    check_keys(b, "bootstrap", {"reps", "seed"});
    cfg.bootstrap.reps = get<int>(b, "reps", "bootstrap", cfg.bootstrap.reps);
    cfg.bootstrap.seed = get<std::uint64_t>(b, "seed", "bootstrap", cfg.bootstrap.seed);
  }
  if (root.contains("simulate")) cfg.simulate = parse_simulate(root.at("simulate"));
  if (root.contains("diagnostics")) cfg.diagnostics = parse_diagnostics(root.at("diagnostics"));
  if (root.contains("cross_sections")) {
    if (!root.at("cross_sections").is_array()) fail("cross_sections must be a list");
    for (const auto& s : root.at("cross_sections"))
      cfg.cross_sections.push_back(parse_cross_section(s));
  }
  if (root.contains("spatial")) {
    const auto& s = root.at("spatial");
    check_keys(s, "spatial", {"floor_km"});
    cfg.floor_km = get<double>(s, "floor_km", "spatial", cfg.floor_km);
    if (!(cfg.floor_km > 0.0)) fail("spatial.floor_km must be positive");
  }
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

}  // namespace didkit
