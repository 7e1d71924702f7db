#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace xtkd::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column; ParseError if absent.
  [[nodiscard]] std::size_t column(const std::string& name) const;
};

std::vector<std::string> split(const std::string& line, char sep = ',');
/// Whole-string parse; ParseError on trailing junk or empty input.
double to_double(const std::string& text);
long long to_integer(const std::string& text);

/// Reads a header line plus rows; every row must have the header's width.
Table read(std::istream& in);

}  // namespace xtkd::csv
