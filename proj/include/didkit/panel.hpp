#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "didkit/spatial.hpp"

namespace didkit {

using UnitId = std::string;

/// One unit-period observation. `treatment_year` is the calendar year of the
/// unit's first treatment as recorded on this row (empty = never treated).
struct PanelRow {
  std::size_t unit = 0;
  int year = 0;
  std::optional<int> treatment_year;
};

/// Long-format unit x period table. Numeric columns hold one value per row
/// (NaN = missing); time-invariant columns are expected to repeat the same
/// value on every row of a unit, which validate_panel checks.
struct PanelDataset {
  std::vector<UnitId> units;
  std::vector<int> periods;
  std::vector<PanelRow> rows;
  std::vector<double> lat;
  std::vector<double> lon;
  std::map<std::string, std::vector<std::string>> labels;
  std::map<std::string, std::vector<double>> values;

  std::size_t n_rows() const { return rows.size(); }
  std::size_t n_units() const { return units.size(); }

  bool has_column(const std::string& name) const { return values.count(name) > 0; }
  // Throws SCHEMA_ERROR for unknown names.
  const std::vector<double>& column(const std::string& name) const;
  const std::vector<std::string>& label_column(const std::string& name) const;
  std::optional<std::size_t> find_unit(const UnitId& id) const;
};

/// First treatment year per unit (nullopt = never treated). Derived from the
/// rows: the earliest recorded treatment year of each unit.
struct TreatmentSchedule {
  std::vector<std::optional<int>> first_treated;

  bool treated_at(std::size_t unit, int year) const {
    const auto& f = first_treated[unit];
    return f.has_value() && year >= *f;
  }
};

TreatmentSchedule schedule_of(const PanelDataset& ds);

/// Census period in which a unit counts as treated: the first period at or
/// after the treatment year. nullopt when never treated or treated after the
/// last period.
std::optional<int> cohort_period(std::span<const int> periods, std::optional<int> treatment_year);

struct Finding {
  std::string code;
  std::string unit;
  std::optional<int> period;
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> errors;
  std::vector<Finding> warnings;

  bool ok() const { return errors.empty(); }
};

struct ValidationOptions {
  std::vector<std::string> covariates;  // must be present and time-invariant
  bool require_coords = false;          // spatial inference requested
};

ValidationReport validate_panel(const PanelDataset& ds, const ValidationOptions& options = {});

// Throws the first validation error, if any.
void require_valid(const PanelDataset& ds, const ValidationOptions& options = {});

/// Units with a non-missing `outcome` in every period. Throws EMPTY_RESULT.
PanelDataset complete_cases(const PanelDataset& ds, const std::string& outcome);

/// Calendar years since first treatment; nullopt for never-treated units.
/// Throws UNKNOWN_UNIT.
std::optional<int> event_time(const PanelDataset& ds, const UnitId& unit, int year);

// Unit-level views read from each unit's first row.
std::vector<std::size_t> first_rows(const PanelDataset& ds);
std::vector<double> unit_values(const PanelDataset& ds, const std::string& column);
std::vector<std::string> unit_labels(const PanelDataset& ds, const std::string& column);
std::vector<GeoPoint> unit_points(const PanelDataset& ds);

/// Dense unit x period lookup of row indices (-1 when absent).
struct PanelGrid {
  std::size_t n_units = 0;
  std::size_t n_periods = 0;
  std::vector<long> cell;

  long at(std::size_t unit, std::size_t period) const { return cell[unit * n_periods + period]; }
};

PanelGrid grid_of(const PanelDataset& ds);
std::size_t period_index(const PanelDataset& ds, int year);

// Panel CSV: unit_id, year, treatment_year, lat, lon, county, hundred, then
// numeric columns. Empty field = missing.
inline constexpr const char* kPanelFixedColumns[] = {"unit_id", "year",   "treatment_year", "lat",
                                                     "lon",     "county", "hundred"};

PanelDataset read_panel_csv(const std::filesystem::path& path);
PanelDataset parse_panel_csv(std::istream& in, const std::string& source);
void write_panel_csv(const PanelDataset& ds, std::ostream& out);

}  // namespace didkit
