#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "didkit/panel.hpp"
#include "didkit/spatial.hpp"

namespace didkit {

enum class Sex { female, male, unknown };

/// One individual census record.
struct MicroRecord {
  UnitId parish;
  int year = 0;
  std::optional<int> age;
  Sex sex = Sex::unknown;
  std::optional<std::string> birth_county;
  std::optional<std::string> residence_county;
  std::optional<int> hisco_major;  // 0..9
  std::optional<double> hiscam;
};

struct SectorShares {
  double manufacturing = 0.0;
  double non_agricultural = 0.0;
};

// Every aggregate below expects records from a single parish-year and throws
// MIXED_CELL otherwise.
long population_count(std::span<const MicroRecord> records);
std::optional<double> child_women_ratio(std::span<const MicroRecord> records);
std::optional<SectorShares> sector_shares(std::span<const MicroRecord> records);
long migration_count(std::span<const MicroRecord> records);
std::optional<double> hiscam_mean(std::span<const MicroRecord> records);

/// Per-parish attributes that do not come from the census: treatment year,
/// representative point, administrative labels and extra time-invariant
/// covariates (e.g. 1801 population).
struct ParishInfo {
  UnitId id;
  std::optional<int> treatment_year;
  GeoPoint location;
  std::string county;
  std::string hundred;
  std::map<std::string, double> covariates;
};

/// Outcome columns produced by build_panel.
inline constexpr const char* kMicroOutcomes[] = {
    "population",          "log_population", "child_women_ratio", "manufacturing_share",
    "non_agricultural_share", "migration",   "log_migration",     "hiscam_mean"};

/// Aggregates records into a parish x census-year panel. The period grid is
/// the set of record years; parishes absent from a year get missing cells.
/// Log columns are missing where the count is zero. Throws EMPTY_RESULT for
/// no records and UNKNOWN_UNIT for parishes without a ParishInfo entry.
PanelDataset build_panel(std::span<const MicroRecord> records,
                         std::span<const ParishInfo> parishes);

struct MicroCsv {
  std::vector<MicroRecord> records;
  std::vector<std::string> warnings;
};

// parish_id, year, age, sex, birth_county, residence_county, hisco_major, hiscam
MicroCsv read_micro_csv(const std::filesystem::path& path);
// parish_id, treatment_year, lat, lon, county, hundred, then numeric covariates
std::vector<ParishInfo> read_parish_csv(const std::filesystem::path& path);

}  // namespace didkit
