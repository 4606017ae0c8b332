#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "didkit/csv.hpp"
#include "didkit/panel.hpp"
#include "expect_error.hpp"
#include "panels.hpp"

using namespace didkit;
using testing_support::balanced_panel;

namespace {

std::optional<int> never(std::size_t) { return std::nullopt; }

PanelDataset two_by_two() {
  return balanced_panel(
      2, {1850, 1860}, [](std::size_t i) { return i == 0 ? std::optional<int>(1860) : std::nullopt; },
      [](std::size_t i, int t) { return static_cast<double>(i) + (t - 1850) * 0.1; });
}

bool has_code(const std::vector<Finding>& findings, const std::string& code) {
  return std::any_of(findings.begin(), findings.end(),
                     [&](const Finding& f) { return f.code == code; });
}

}  // namespace

TEST(Csv, QuotedFieldsCrlfAndBom) {
  std::istringstream in("\xEF\xBB\xBF" "a,b\r\n\"x, y\",\"say \"\"hi\"\"\"\r\n\r\n1,2\r\n");
  const auto t = parse_csv(in, "mem");
  ASSERT_EQ(t.header, (std::vector<std::string>{"a", "b"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "x, y");
  EXPECT_EQ(t.rows[0][1], "say \"hi\"");
  EXPECT_EQ(t.lines[1], 4u);
}

TEST(Csv, WrongFieldCountReportsLine) {
  std::istringstream in("a,b\n1,2\n3\n");
  try {
    parse_csv(in, "f.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "PARSE_ERROR");
    EXPECT_NE(std::string(e.what()).find("f.csv:3"), std::string::npos);
  }
}

TEST(Csv, UnknownColumnIsSchemaError) {
  std::istringstream in("a,b\n1,2\n");
  const auto t = parse_csv(in, "mem");
  EXPECT_DIDKIT_ERROR(t.column("c"), "SCHEMA_ERROR");
}

TEST(Csv, DoublesRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6356.0, 0.0664, 1e21}) {
    const auto s = format_double(v);
    EXPECT_EQ(parse_double(s, "mem", 1), v) << s;
  }
  EXPECT_EQ(format_double(std::nan("")), "");
  EXPECT_TRUE(std::isnan(parse_double("", "mem", 1)));
  EXPECT_DIDKIT_ERROR(parse_double("1.5x", "mem", 1), "PARSE_ERROR");
}

TEST(Validate, NonAbsorbingTreatment) {
  // Treated in 1860, then recorded as untreated in 1880.
  auto ds = balanced_panel(2, {1850, 1860, 1880, 1901}, never, [](std::size_t, int) { return 1.0; });
  for (auto& row : ds.rows)
    if (row.unit == 0 && row.year == 1860) row.treatment_year = 1860;
  const auto report = validate_panel(ds);
  EXPECT_TRUE(has_code(report.errors, "NON_ABSORBING"));
  EXPECT_DIDKIT_ERROR(require_valid(ds), "NON_ABSORBING");
}

TEST(Validate, CleanTwoByTwoHasNoErrors) {
  const auto report = validate_panel(two_by_two());
  EXPECT_TRUE(report.errors.empty());
  EXPECT_TRUE(report.ok());
}

TEST(Validate, DuplicateRow) {
  auto ds = two_by_two();
  ds.rows.push_back(ds.rows[0]);
  ds.lat.push_back(ds.lat[0]);
  ds.lon.push_back(ds.lon[0]);
  for (auto& [name, col] : ds.values) col.push_back(col[0]);
  for (auto& [name, col] : ds.labels) col.push_back(col[0]);
  EXPECT_TRUE(has_code(validate_panel(ds).errors, "DUPLICATE_ROW"));
}

TEST(Validate, UnorderedPeriods) {
  auto ds = two_by_two();
  std::swap(ds.periods[0], ds.periods[1]);
  EXPECT_TRUE(has_code(validate_panel(ds).errors, "PERIODS_UNORDERED"));
}

TEST(Validate, MissingCoordinatesOnlyWhenSpatialRequested) {
  auto ds = two_by_two();
  ds.lat[0] = ds.lat[1] = std::nan("");
  ds.lon[0] = ds.lon[1] = std::nan("");
  EXPECT_FALSE(has_code(validate_panel(ds).errors, "MISSING_COORDS"));
  ValidationOptions opts;
  opts.require_coords = true;
  EXPECT_TRUE(has_code(validate_panel(ds, opts).errors, "MISSING_COORDS"));
}

TEST(Validate, CoordinatesOutOfRange) {
  auto ds = two_by_two();
  ds.lat[0] = ds.lat[1] = 91.0;
  EXPECT_TRUE(has_code(validate_panel(ds).errors, "BAD_COORDS"));
}

TEST(Validate, TimeVaryingCovariateRejected) {
  auto ds = two_by_two();
  ds.values["x"] = {1.0, 2.0, 3.0, 3.0};
  ValidationOptions opts;
  opts.covariates = {"x"};
  EXPECT_TRUE(has_code(validate_panel(ds, opts).errors, "COVARIATE_VARYING"));
  opts.covariates = {"nope"};
  EXPECT_TRUE(has_code(validate_panel(ds, opts).errors, "UNKNOWN_COVARIATE"));
}

TEST(Validate, MissingCovariateIsAWarning) {
  auto ds = two_by_two();
  ds.values["x"] = {std::nan(""), std::nan(""), 3.0, 3.0};
  ValidationOptions opts;
  opts.covariates = {"x"};
  const auto report = validate_panel(ds, opts);
  EXPECT_TRUE(report.ok());
  EXPECT_TRUE(has_code(report.warnings, "COVARIATE_MISSING"));
}

TEST(Validate, NoNeverTreatedWarning) {
  auto ds = balanced_panel(2, {1850, 1860}, [](std::size_t) { return std::optional<int>(1860); },
                           [](std::size_t, int) { return 0.0; });
  EXPECT_TRUE(has_code(validate_panel(ds).warnings, "NO_NEVER_TREATED"));
}

TEST(CompleteCases, DropsUnitsWithAnyMissingCell) {
  // 1589 units x 4 periods, 9 units missing one cell each.
  auto ds = balanced_panel(1589, {1850, 1860, 1880, 1901}, never,
                           [](std::size_t i, int t) { return (i < 9 && t == 1880) ? std::nan("") : 1.0; });
  EXPECT_EQ(ds.n_rows(), 6356u);
  const auto cc = complete_cases(ds, "y");
  EXPECT_EQ(cc.n_units(), 1580u);
  EXPECT_EQ(cc.n_rows(), 6320u);
  EXPECT_EQ(cc.periods, ds.periods);
}

TEST(CompleteCases, IdentityWithoutMissingCells) {
  const auto ds = two_by_two();
  const auto cc = complete_cases(ds, "y");
  EXPECT_EQ(cc.units, ds.units);
  EXPECT_EQ(cc.values.at("y"), ds.values.at("y"));
}

TEST(CompleteCases, Idempotent) {
  auto ds = balanced_panel(20, {1, 2, 3}, never,
                           [](std::size_t i, int t) { return (i % 3 == 0 && t == 2) ? std::nan("") : i * 1.0; });
  const auto once = complete_cases(ds, "y");
  const auto twice = complete_cases(once, "y");
  EXPECT_EQ(once.units, twice.units);
  EXPECT_EQ(once.values.at("y"), twice.values.at("y"));
  EXPECT_EQ(once.labels.at("county"), twice.labels.at("county"));
}

TEST(CompleteCases, EmptyResult) {
  auto ds = balanced_panel(3, {1, 2}, never, [](std::size_t, int t) { return t == 2 ? std::nan("") : 1.0; });
  EXPECT_DIDKIT_ERROR(complete_cases(ds, "y"), "EMPTY_RESULT");
}

TEST(EventTime, CalendarYears) {
  auto ds = balanced_panel(2, {1850, 1860, 1880}, [](std::size_t i) {
    return i == 0 ? std::optional<int>(1860) : std::nullopt;
  }, [](std::size_t, int) { return 0.0; });
  EXPECT_EQ(event_time(ds, "u0", 1880), 20);
  EXPECT_EQ(event_time(ds, "u0", 1850), -10);
  EXPECT_EQ(event_time(ds, "u0", 1860), 0);
  EXPECT_EQ(event_time(ds, "u1", 1880), std::nullopt);
  EXPECT_DIDKIT_ERROR(event_time(ds, "zz", 1880), "UNKNOWN_UNIT");
}

TEST(Schedule, CohortIsFirstPeriodAtOrAfterConnection) {
  const std::vector<int> periods{1850, 1860, 1880, 1901};
  EXPECT_EQ(cohort_period(periods, 1855), 1860);
  EXPECT_EQ(cohort_period(periods, 1860), 1860);
  EXPECT_EQ(cohort_period(periods, 1850), 1850);
  EXPECT_EQ(cohort_period(periods, 1845), 1850);
  EXPECT_EQ(cohort_period(periods, 1902), std::nullopt);
  EXPECT_EQ(cohort_period(periods, std::nullopt), std::nullopt);
}

TEST(Schedule, TreatmentIndicatorIsAbsorbing) {
  auto ds = balanced_panel(30, {1850, 1860, 1880, 1901}, [](std::size_t i) {
    return i % 4 == 0 ? std::nullopt : std::optional<int>(1845 + 10 * static_cast<int>(i % 7));
  }, [](std::size_t, int) { return 0.0; });
  const auto s = schedule_of(ds);
  for (std::size_t u = 0; u < ds.n_units(); ++u)
    for (std::size_t t = 1; t < ds.periods.size(); ++t)
      EXPECT_LE(s.treated_at(u, ds.periods[t - 1]), s.treated_at(u, ds.periods[t]));
}

TEST(PanelCsv, RoundTripIsLossless) {
  auto ds = balanced_panel(5, {1850, 1860, 1880}, [](std::size_t i) {
    return i < 2 ? std::optional<int>(1858 + static_cast<int>(i)) : std::nullopt;
  }, [](std::size_t i, int t) { return (i == 3 && t == 1860) ? std::nan("") : 0.1 * i + t / 7.0; });
  testing_support::add_unit_column(ds, "x", [](std::size_t i) { return 1.0 / (i + 3.0); });
  ds.labels["county"][0] = "Ringkøbing, \"west\"";
  ds.labels["county"][1] = ds.labels["county"][2] = ds.labels["county"][0];
  std::ostringstream first;
  write_panel_csv(ds, first);
  std::istringstream in(first.str());
  const auto back = parse_panel_csv(in, "mem");
  std::ostringstream second;
  write_panel_csv(back, second);
  EXPECT_EQ(first.str(), second.str());
  EXPECT_EQ(back.units, ds.units);
  EXPECT_EQ(back.periods, ds.periods);
  EXPECT_EQ(back.values.at("x"), ds.values.at("x"));
}

TEST(PanelCsv, MissingFixedColumnIsSchemaError) {
  std::istringstream in("unit_id,year,lat,lon,county,hundred\nu1,1850,55,10,a,b\n");
  EXPECT_DIDKIT_ERROR(parse_panel_csv(in, "mem"), "SCHEMA_ERROR");
}

TEST(PanelCsv, BadNumberIsParseError) {
  std::istringstream in(
      "unit_id,year,treatment_year,lat,lon,county,hundred,y\nu1,1850,,55,10,a,b,abc\n");
  EXPECT_DIDKIT_ERROR(parse_panel_csv(in, "mem"), "PARSE_ERROR");
}
