#include "didkit/panel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include "didkit/csv.hpp"
#include "didkit/error.hpp"

namespace didkit {

const std::vector<double>& PanelDataset::column(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw Error("SCHEMA_ERROR", "unknown column '" + name + "'");
  return it->second;
}

const std::vector<std::string>& PanelDataset::label_column(const std::string& name) const {
  auto it = labels.find(name);
  if (it == labels.end()) throw Error("SCHEMA_ERROR", "unknown label column '" + name + "'");
  return it->second;
}

std::optional<std::size_t> PanelDataset::find_unit(const UnitId& id) const {
  auto it = std::find(units.begin(), units.end(), id);
  if (it == units.end()) return std::nullopt;
  return static_cast<std::size_t>(it - units.begin());
}

TreatmentSchedule schedule_of(const PanelDataset& ds) {
  TreatmentSchedule s;
  s.first_treated.assign(ds.n_units(), std::nullopt);
  for (const auto& row : ds.rows) {
    if (!row.treatment_year || row.unit >= ds.n_units()) continue;
    auto& f = s.first_treated[row.unit];
    if (!f || *row.treatment_year < *f) f = row.treatment_year;
  }
  return s;
}

std::optional<int> cohort_period(std::span<const int> periods, std::optional<int> treatment_year) {
  if (!treatment_year) return std::nullopt;
  for (int p : periods)
    if (p >= *treatment_year) return p;
  return std::nullopt;
}

namespace {

bool same_value(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

void add(std::vector<Finding>& out, std::string code, const PanelDataset& ds, std::size_t unit,
         std::optional<int> period, std::string message) {
  out.push_back({std::move(code), unit < ds.n_units() ? ds.units[unit] : std::string{}, period,
                 std::move(message)});
}

}  // namespace

ValidationReport validate_panel(const PanelDataset& ds, const ValidationOptions& options) {
  ValidationReport report;
  auto& errors = report.errors;
  const std::size_t n = ds.n_rows();

  for (std::size_t i = 1; i < ds.periods.size(); ++i) {
    if (ds.periods[i] <= ds.periods[i - 1]) {
      errors.push_back({"PERIODS_UNORDERED", "", ds.periods[i],
                        "periods must be strictly ascending"});
      break;
    }
  }

  bool lengths_ok = ds.lat.size() == n && ds.lon.size() == n;
  for (const auto& [name, col] : ds.values) lengths_ok = lengths_ok && col.size() == n;
  for (const auto& [name, col] : ds.labels) lengths_ok = lengths_ok && col.size() == n;
  if (!lengths_ok) {
    errors.push_back({"COLUMN_LENGTH", "", std::nullopt, "column lengths differ from row count"});
    return report;
  }

  std::set<UnitId> seen_ids;
  for (const auto& id : ds.units) {
    if (id.empty()) errors.push_back({"EMPTY_UNIT_ID", id, std::nullopt, "empty unit id"});
    if (!seen_ids.insert(id).second)
      errors.push_back({"DUPLICATE_UNIT_ID", id, std::nullopt, "unit id listed twice"});
  }

  std::set<int> period_set(ds.periods.begin(), ds.periods.end());
  std::vector<std::vector<std::size_t>> by_unit(ds.n_units());
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = ds.rows[r];
    if (row.unit >= ds.n_units()) {
      errors.push_back({"UNKNOWN_UNIT", "", row.year, "row references a missing unit"});
      continue;
    }
    if (!period_set.count(row.year))
      add(errors, "UNKNOWN_PERIOD", ds, row.unit, row.year, "year not in the period list");
    by_unit[row.unit].push_back(r);
  }

  for (std::size_t u = 0; u < ds.n_units(); ++u) {
    auto rows = by_unit[u];
    if (rows.empty()) {
      add(report.warnings, "UNIT_WITHOUT_ROWS", ds, u, std::nullopt, "unit has no rows");
      continue;
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [&](std::size_t a, std::size_t b) { return ds.rows[a].year < ds.rows[b].year; });
    for (std::size_t k = 1; k < rows.size(); ++k)
      if (ds.rows[rows[k]].year == ds.rows[rows[k - 1]].year)
        add(errors, "DUPLICATE_ROW", ds, u, ds.rows[rows[k]].year, "duplicate (unit, period) row");
    if (rows.size() < ds.periods.size())
      add(report.warnings, "MISSING_ROW", ds, u, std::nullopt,
          "unit is not observed in every period; absent cells are treated as missing");

    bool was_treated = false;
    bool non_absorbing = false;
    for (std::size_t r : rows) {
      const auto& row = ds.rows[r];
      const bool d = row.treatment_year && row.year >= *row.treatment_year;
      if (was_treated && !d) {
        add(errors, "NON_ABSORBING", ds, u, row.year, "treatment switches off");
        non_absorbing = true;
        break;
      }
      was_treated = was_treated || d;
    }
    if (!non_absorbing) {
      for (std::size_t r : rows) {
        if (ds.rows[r].treatment_year != ds.rows[rows.front()].treatment_year) {
          add(errors, "INCONSISTENT_SCHEDULE", ds, u, ds.rows[r].year,
              "treatment year differs across rows of the unit");
          break;
        }
      }
    }

    const std::size_t f = rows.front();
    for (std::size_t r : rows) {
      if (!same_value(ds.lat[r], ds.lat[f]) || !same_value(ds.lon[r], ds.lon[f])) {
        add(errors, "COORDS_VARYING", ds, u, ds.rows[r].year, "coordinates differ across rows");
        break;
      }
    }
    for (std::size_t r : rows) {
      const bool missing = std::isnan(ds.lat[r]) || std::isnan(ds.lon[r]);
      if (!missing && !valid_point({ds.lat[r], ds.lon[r]})) {
        add(errors, "BAD_COORDS", ds, u, ds.rows[r].year, "coordinates out of range");
        break;
      }
      if (missing && options.require_coords) {
        add(errors, "MISSING_COORDS", ds, u, ds.rows[r].year,
            "coordinates required for spatial inference");
        break;
      }
    }
    for (const auto& [name, col] : ds.labels) {
      for (std::size_t r : rows) {
        if (col[r] != col[f]) {
          add(errors, "LABEL_VARYING", ds, u, ds.rows[r].year, "label '" + name + "' varies");
          break;
        }
      }
    }
    for (const auto& name : options.covariates) {
      auto it = ds.values.find(name);
      if (it == ds.values.end()) continue;
      const auto& col = it->second;
      if (std::isnan(col[f]))
        add(report.warnings, "COVARIATE_MISSING", ds, u, std::nullopt,
            "covariate '" + name + "' missing");
      for (std::size_t r : rows) {
        if (!same_value(col[r], col[f])) {
          add(errors, "COVARIATE_VARYING", ds, u, ds.rows[r].year,
              "covariate '" + name + "' is not time-invariant");
          break;
        }
      }
    }
  }

  for (const auto& name : options.covariates)
    if (!ds.has_column(name))
      errors.push_back({"UNKNOWN_COVARIATE", "", std::nullopt, "no column '" + name + "'"});

  const auto schedule = schedule_of(ds);
  if (std::none_of(schedule.first_treated.begin(), schedule.first_treated.end(),
                   [](const auto& f) { return !f.has_value(); }))
    report.warnings.push_back({"NO_NEVER_TREATED", "", std::nullopt,
                               "no never-treated units; group-time estimation unavailable"});
  return report;
}

void require_valid(const PanelDataset& ds, const ValidationOptions& options) {
  const auto report = validate_panel(ds, options);
  if (report.ok()) return;
  const auto& e = report.errors.front();
  std::string where = e.unit.empty() ? "" : " (unit " + e.unit;
  if (!where.empty()) where += e.period ? ", period " + std::to_string(*e.period) + ")" : ")";
  throw Error(e.code, e.message + where);
}

namespace {

PanelDataset subset(const PanelDataset& ds, const std::vector<bool>& keep_unit) {
  PanelDataset out;
  out.periods = ds.periods;
  std::vector<std::size_t> remap(ds.n_units(), 0);
  for (std::size_t u = 0; u < ds.n_units(); ++u) {
    if (!keep_unit[u]) continue;
    remap[u] = out.units.size();
    out.units.push_back(ds.units[u]);
  }
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < ds.n_rows(); ++r)
    if (keep_unit[ds.rows[r].unit]) kept.push_back(r);
  for (std::size_t r : kept) {
    PanelRow row = ds.rows[r];
    row.unit = remap[row.unit];
    out.rows.push_back(row);
    out.lat.push_back(ds.lat[r]);
    out.lon.push_back(ds.lon[r]);
  }
  for (const auto& [name, col] : ds.values) {
    auto& dst = out.values[name];
    dst.reserve(kept.size());
    for (std::size_t r : kept) dst.push_back(col[r]);
  }
  for (const auto& [name, col] : ds.labels) {
    auto& dst = out.labels[name];
    dst.reserve(kept.size());
    for (std::size_t r : kept) dst.push_back(col[r]);
  }
  return out;
}

}  // namespace

PanelDataset complete_cases(const PanelDataset& ds, const std::string& outcome) {
  const auto& y = ds.column(outcome);
  const auto grid = grid_of(ds);
  std::vector<bool> keep(ds.n_units(), true);
  for (std::size_t u = 0; u < ds.n_units(); ++u) {
    for (std::size_t p = 0; p < grid.n_periods && keep[u]; ++p) {
      const long r = grid.at(u, p);
      keep[u] = r >= 0 && !std::isnan(y[r]);
    }
  }
  if (std::none_of(keep.begin(), keep.end(), [](bool k) { return k; }))
    throw Error("EMPTY_RESULT", "no unit observes '" + outcome + "' in every period");
  return subset(ds, keep);
}

std::optional<int> event_time(const PanelDataset& ds, const UnitId& unit, int year) {
  const auto u = ds.find_unit(unit);
  if (!u) throw Error("UNKNOWN_UNIT", "unit '" + unit + "' not in panel");
  const auto first = schedule_of(ds).first_treated[*u];
  if (!first) return std::nullopt;
  return year - *first;
}

std::vector<std::size_t> first_rows(const PanelDataset& ds) {
  std::vector<std::size_t> first(ds.n_units(), ds.n_rows());
  for (std::size_t r = ds.n_rows(); r-- > 0;) first[ds.rows[r].unit] = r;
  for (std::size_t u = 0; u < ds.n_units(); ++u)
    if (first[u] == ds.n_rows())
      throw Error("SCHEMA_ERROR", "unit '" + ds.units[u] + "' has no rows");
  return first;
}

std::vector<double> unit_values(const PanelDataset& ds, const std::string& column) {
  const auto& col = ds.column(column);
  std::vector<double> out;
  for (std::size_t r : first_rows(ds)) out.push_back(col[r]);
  return out;
}

std::vector<std::string> unit_labels(const PanelDataset& ds, const std::string& column) {
  const auto& col = ds.label_column(column);
  std::vector<std::string> out;
  for (std::size_t r : first_rows(ds)) out.push_back(col[r]);
  return out;
}

std::vector<GeoPoint> unit_points(const PanelDataset& ds) {
  std::vector<GeoPoint> out;
  for (std::size_t r : first_rows(ds)) out.push_back({ds.lat[r], ds.lon[r]});
  return out;
}

std::size_t period_index(const PanelDataset& ds, int year) {
  auto it = std::lower_bound(ds.periods.begin(), ds.periods.end(), year);
  if (it == ds.periods.end() || *it != year)
    throw Error("UNKNOWN_PERIOD", "period " + std::to_string(year) + " not in panel");
  return static_cast<std::size_t>(it - ds.periods.begin());
}

PanelGrid grid_of(const PanelDataset& ds) {
  PanelGrid grid;
  grid.n_units = ds.n_units();
  grid.n_periods = ds.periods.size();
  grid.cell.assign(grid.n_units * grid.n_periods, -1);
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    const auto p = period_index(ds, ds.rows[r].year);
    auto& slot = grid.cell[ds.rows[r].unit * grid.n_periods + p];
    if (slot < 0) slot = static_cast<long>(r);
  }
  return grid;
}

PanelDataset parse_panel_csv(std::istream& in, const std::string& source) {
  const CsvTable table = parse_csv(in, source);
  const auto c_unit = table.column("unit_id");
  const auto c_year = table.column("year");
  const auto c_treat = table.column("treatment_year");
  const auto c_lat = table.column("lat");
  const auto c_lon = table.column("lon");
  const auto c_county = table.column("county");
  const auto c_hundred = table.column("hundred");
  const std::set<std::size_t> fixed{c_unit, c_year, c_treat, c_lat, c_lon, c_county, c_hundred};

  PanelDataset ds;
  std::vector<std::pair<std::string, std::size_t>> numeric;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (fixed.count(c)) continue;
    if (ds.values.count(table.header[c]))
      throw Error("SCHEMA_ERROR", source + ": duplicate column '" + table.header[c] + "'");
    numeric.emplace_back(table.header[c], c);
    ds.values[table.header[c]];
  }
  auto& county = ds.labels["county"];
  auto& hundred = ds.labels["hundred"];

  std::unordered_map<std::string, std::size_t> unit_index;
  std::set<int> years;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& f = table.rows[i];
    const std::size_t line = table.lines[i];
    auto [it, inserted] = unit_index.emplace(f[c_unit], ds.units.size());
    if (inserted) ds.units.push_back(f[c_unit]);
    const auto year = parse_optional_int(f[c_year], source, line);
    if (!year) throw Error("PARSE_ERROR", source + ":" + std::to_string(line) + ": empty year");
    const auto treat = parse_optional_int(f[c_treat], source, line);
    ds.rows.push_back({it->second, static_cast<int>(*year),
                       treat ? std::optional<int>(static_cast<int>(*treat)) : std::nullopt});
    years.insert(static_cast<int>(*year));
    ds.lat.push_back(parse_double(f[c_lat], source, line));
    ds.lon.push_back(parse_double(f[c_lon], source, line));
    county.push_back(f[c_county]);
    hundred.push_back(f[c_hundred]);
    for (const auto& [name, c] : numeric) ds.values[name].push_back(parse_double(f[c], source, line));
  }
  ds.periods.assign(years.begin(), years.end());
  return ds;
}

PanelDataset read_panel_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("PARSE_ERROR", path.string() + ": cannot open file");
  return parse_panel_csv(in, path.string());
}

void write_panel_csv(const PanelDataset& ds, std::ostream& out) {
  std::vector<std::string> header(std::begin(kPanelFixedColumns), std::end(kPanelFixedColumns));
  for (const auto& [name, col] : ds.values) header.push_back(name);
  write_csv_row(out, header);
  const auto* county = ds.labels.count("county") ? &ds.labels.at("county") : nullptr;
  const auto* hundred = ds.labels.count("hundred") ? &ds.labels.at("hundred") : nullptr;
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    const auto& row = ds.rows[r];
    std::vector<std::string> fields{ds.units[row.unit], std::to_string(row.year),
                                    row.treatment_year ? std::to_string(*row.treatment_year) : "",
                                    format_double(ds.lat[r]), format_double(ds.lon[r]),
                                    county ? (*county)[r] : "", hundred ? (*hundred)[r] : ""};
    for (const auto& [name, col] : ds.values) fields.push_back(format_double(col[r]));
    write_csv_row(out, fields);
  }
}

}  // namespace didkit
