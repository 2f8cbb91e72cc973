#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace readalign {

// Minimal RFC-4180 reader: comma separated, optional double-quoted fields,
// "\n" or "\r\n" line endings, first row is the header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  // Index of a header column; throws ParseError when absent.
  std::size_t column(std::string_view name, const std::string& source) const;
};

CsvTable parse_csv(std::string_view text, const std::string& source);

std::string csv_field(std::string_view field);
std::string csv_row(const std::vector<std::string>& fields);

// Shortest representation that parses back to the same value.
std::string format_double(double v);

double parse_double(std::string_view s, const std::string& where);
std::int64_t parse_int(std::string_view s, const std::string& where);

std::string to_lower(std::string_view s);
std::string where(const std::string& source, std::size_t line, std::string_view field);

}  // namespace readalign
