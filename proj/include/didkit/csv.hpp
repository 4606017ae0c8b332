#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace didkit {

/// A parsed CSV file: header plus string cells. Line numbers are 1-based and
/// refer to the physical line on which each record starts.
struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;

  std::optional<std::size_t> find_column(std::string_view name) const;
  // Throws SCHEMA_ERROR naming the column.
  std::size_t column(std::string_view name) const;
};

CsvTable parse_csv(std::istream& in, const std::string& source);
CsvTable read_csv(const std::filesystem::path& path);

std::string csv_escape(std::string_view field);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

// Shortest representation that parses back to the same double; "" for NaN.
std::string format_double(double value);

// Empty field parses to NaN. Anything else must be a complete number or a
// PARSE_ERROR(source, line) is thrown.
double parse_double(std::string_view field, const std::string& source, std::size_t line);
std::optional<long> parse_optional_int(std::string_view field, const std::string& source,
                                       std::size_t line);

}  // namespace didkit
