#include "didkit/microdata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include "didkit/csv.hpp"
#include "didkit/error.hpp"

namespace didkit {
namespace {

void check_cell(std::span<const MicroRecord> records) {
  for (const auto& r : records)
    if (r.parish != records.front().parish || r.year != records.front().year)
      throw Error("MIXED_CELL", "records span more than one parish-year");
}

bool in_band(const std::optional<int>& age, int lo, int hi) {
  return age.has_value() && *age >= lo && *age <= hi;
}

bool valid_major(const std::optional<int>& m) { return m.has_value() && *m >= 0 && *m <= 9; }

}  // namespace

long population_count(std::span<const MicroRecord> records) {
  check_cell(records);
  return static_cast<long>(records.size());
}

std::optional<double> child_women_ratio(std::span<const MicroRecord> records) {
  check_cell(records);
  long children = 0;
  long women = 0;
  for (const auto& r : records) {
    if (in_band(r.age, 1, 5)) ++children;
    if (r.sex == Sex::female && in_band(r.age, 15, 45)) ++women;
  }
  if (women == 0) return std::nullopt;
  return static_cast<double>(children) / static_cast<double>(women);
}

std::optional<SectorShares> sector_shares(std::span<const MicroRecord> records) {
  check_cell(records);
  long labor = 0;
  long manufacturing = 0;
  long agriculture = 0;
  for (const auto& r : records) {
    if (!valid_major(r.hisco_major)) continue;
    ++labor;
    if (*r.hisco_major >= 7) ++manufacturing;
    if (*r.hisco_major == 6) ++agriculture;
  }
  if (labor == 0) return std::nullopt;
  const double l = static_cast<double>(labor);
  return SectorShares{manufacturing / l, (labor - agriculture) / l};
}

long migration_count(std::span<const MicroRecord> records) {
  check_cell(records);
  return std::count_if(records.begin(), records.end(), [](const MicroRecord& r) {
    return r.birth_county && r.residence_county && *r.birth_county != *r.residence_county;
  });
}

std::optional<double> hiscam_mean(std::span<const MicroRecord> records) {
  check_cell(records);
  double sum = 0.0;
  long n = 0;
  for (const auto& r : records) {
    if (!r.hiscam) continue;
    sum += *r.hiscam;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

PanelDataset build_panel(std::span<const MicroRecord> records,
                         std::span<const ParishInfo> parishes) {
  if (records.empty()) throw Error("EMPTY_RESULT", "no micro records");
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();

  std::unordered_map<std::string, const ParishInfo*> info;
  for (const auto& p : parishes) info.emplace(p.id, &p);

  std::set<UnitId> unit_set;
  std::set<int> year_set;
  for (const auto& r : records) {
    if (!info.count(r.parish))
      throw Error("UNKNOWN_UNIT", "parish '" + r.parish + "' missing from the parish table");
    unit_set.insert(r.parish);
    year_set.insert(r.year);
  }

  PanelDataset ds;
  ds.units.assign(unit_set.begin(), unit_set.end());
  ds.periods.assign(year_set.begin(), year_set.end());
  const std::size_t n_units = ds.units.size();
  const std::size_t n_periods = ds.periods.size();
  std::unordered_map<std::string, std::size_t> unit_index;
  for (std::size_t u = 0; u < n_units; ++u) unit_index.emplace(ds.units[u], u);

  // Sort record indices by cell so each cell is a contiguous slice; the sort
  // key makes the result independent of input order.
  std::vector<MicroRecord> sorted(records.begin(), records.end());
  std::vector<std::size_t> cell_of(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    cell_of[i] = unit_index[sorted[i].parish] * n_periods + period_index(ds, sorted[i].year);
  std::vector<std::size_t> order(sorted.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cell_of[a] < cell_of[b]; });
  std::vector<MicroRecord> grouped;
  grouped.reserve(sorted.size());
  for (std::size_t i : order) grouped.push_back(sorted[i]);
  std::vector<std::size_t> begin(n_units * n_periods + 1, 0);
  for (std::size_t i : order) ++begin[cell_of[i] + 1];
  std::partial_sum(begin.begin(), begin.end(), begin.begin());

  const std::size_t n_cells = n_units * n_periods;
  std::map<std::string, std::vector<double>> out;
  for (const char* name : kMicroOutcomes) out[name].assign(n_cells, nan);
  auto& pop = out["population"];
  auto& log_pop = out["log_population"];
  auto& cwr = out["child_women_ratio"];
  auto& manu = out["manufacturing_share"];
  auto& nonag = out["non_agricultural_share"];
  auto& mig = out["migration"];
  auto& log_mig = out["log_migration"];
  auto& hiscam = out["hiscam_mean"];

#pragma omp parallel for schedule(dynamic, 16)
  for (long c = 0; c < static_cast<long>(n_cells); ++c) {
    const std::span<const MicroRecord> cell(grouped.data() + begin[c], begin[c + 1] - begin[c]);
    if (cell.empty()) continue;
    const double p = static_cast<double>(population_count(cell));
    pop[c] = p;
    log_pop[c] = p > 0 ? std::log(p) : nan;
    if (auto v = child_women_ratio(cell)) cwr[c] = *v;
    if (auto s = sector_shares(cell)) {
      manu[c] = s->manufacturing;
      nonag[c] = s->non_agricultural;
    }
    const double m = static_cast<double>(migration_count(cell));
    mig[c] = m;
    log_mig[c] = m > 0 ? std::log(m) : nan;
    if (auto h = hiscam_mean(cell)) hiscam[c] = *h;
  }

  std::set<std::string> covariate_names;
  for (const auto& u : ds.units)
    for (const auto& [name, v] : info[u]->covariates) covariate_names.insert(name);

  auto& county = ds.labels["county"];
  auto& hundred = ds.labels["hundred"];
  for (const auto& name : kMicroOutcomes) ds.values[name];
  for (const auto& name : covariate_names) ds.values[name];
  for (std::size_t u = 0; u < n_units; ++u) {
    const ParishInfo& p = *info[ds.units[u]];
    for (std::size_t t = 0; t < n_periods; ++t) {
      ds.rows.push_back({u, ds.periods[t], p.treatment_year});
      ds.lat.push_back(p.location.lat);
      ds.lon.push_back(p.location.lon);
      county.push_back(p.county);
      hundred.push_back(p.hundred);
      for (const auto& [name, col] : out) ds.values[name].push_back(col[u * n_periods + t]);
      for (const auto& name : covariate_names) {
        auto it = p.covariates.find(name);
        ds.values[name].push_back(it == p.covariates.end() ? nan : it->second);
      }
    }
  }
  return ds;
}

MicroCsv read_micro_csv(const std::filesystem::path& path) {
  const auto table = read_csv(path);
  const auto& src = table.source;
  const auto c_parish = table.column("parish_id");
  const auto c_year = table.column("year");
  const auto c_age = table.column("age");
  const auto c_sex = table.column("sex");
  const auto c_birth = table.column("birth_county");
  const auto c_res = table.column("residence_county");
  const auto c_major = table.column("hisco_major");
  const auto c_hiscam = table.column("hiscam");

  MicroCsv out;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& f = table.rows[i];
    const auto line = table.lines[i];
    MicroRecord r;
    r.parish = f[c_parish];
    const auto year = parse_optional_int(f[c_year], src, line);
    if (!year) throw Error("PARSE_ERROR", src + ":" + std::to_string(line) + ": empty year");
    r.year = static_cast<int>(*year);
    if (auto age = parse_optional_int(f[c_age], src, line)) {
      if (*age < 0)
        throw Error("PARSE_ERROR", src + ":" + std::to_string(line) + ": negative age");
      r.age = static_cast<int>(*age);
    }
    const auto& sex = f[c_sex];
    if (sex == "female" || sex == "f" || sex == "F") r.sex = Sex::female;
    else if (sex == "male" || sex == "m" || sex == "M") r.sex = Sex::male;
    if (!f[c_birth].empty()) r.birth_county = f[c_birth];
    if (!f[c_res].empty()) r.residence_county = f[c_res];
    if (auto major = parse_optional_int(f[c_major], src, line)) {
      if (*major >= 0 && *major <= 9) {
        r.hisco_major = static_cast<int>(*major);
      } else {
        out.warnings.push_back(src + ":" + std::to_string(line) + ": HISCO major group " +
                               std::to_string(*major) + " outside 0-9 treated as missing");
      }
    }
    const double h = parse_double(f[c_hiscam], src, line);
    if (!std::isnan(h)) r.hiscam = h;
    out.records.push_back(std::move(r));
  }
  return out;
}

std::vector<ParishInfo> read_parish_csv(const std::filesystem::path& path) {
  const auto table = read_csv(path);
  const auto& src = table.source;
  const auto c_id = table.column("parish_id");
  const auto c_treat = table.column("treatment_year");
  const auto c_lat = table.column("lat");
  const auto c_lon = table.column("lon");
  const auto c_county = table.column("county");
  const auto c_hundred = table.column("hundred");
  const std::set<std::size_t> fixed{c_id, c_treat, c_lat, c_lon, c_county, c_hundred};

  std::vector<ParishInfo> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& f = table.rows[i];
    const auto line = table.lines[i];
    ParishInfo p;
    p.id = f[c_id];
    if (!ids.insert(p.id).second)
      throw Error("PARSE_ERROR", src + ":" + std::to_string(line) + ": duplicate parish '" + p.id + "'");
    if (auto t = parse_optional_int(f[c_treat], src, line)) p.treatment_year = static_cast<int>(*t);
    p.location = {parse_double(f[c_lat], src, line), parse_double(f[c_lon], src, line)};
    if (!valid_point(p.location))
      throw Error("PARSE_ERROR", src + ":" + std::to_string(line) + ": invalid coordinates");
    p.county = f[c_county];
    p.hundred = f[c_hundred];
    for (std::size_t c = 0; c < table.header.size(); ++c)
      if (!fixed.count(c)) p.covariates[table.header[c]] = parse_double(f[c], src, line);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace didkit
