#pragma once

// Plain-text tables and matrices: `#` comment lines, one header row, and
// comma-separated data. Numbers carry 9 significant digits.

#include <string>
#include <string_view>
#include <vector>

#include "spe/core.hpp"

namespace spe::harness {

/// Scientific notation with 9 significant digits ("%.8e"); nan/inf spelled out.
std::string format_number(double value);
std::string format_number(Index value);

/// Parses a number written by format_number (or any strtod-compatible text).
/// `line` is used in the ParseError message.
double parse_number(std::string_view text, long line = 0);

std::vector<std::string> split_fields(std::string_view line);
std::string_view trim(std::string_view s);

struct CsvTable {
  std::vector<std::string> comments;  // leading `#` lines, without the marker
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> trailer;  // `#` lines after the data

  void add_row(std::vector<std::string> cells);
  std::string serialize() const;
  static CsvTable parse(std::string_view text);

  /// Index of a named column; throws ParseError when absent.
  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::string_view name) const;
};

/// Dense matrix with `# rows=M` and `# cols=N` header lines.
struct CsvMatrix {
  std::vector<std::string> comments;  // extra metadata lines
  Matrix values;

  std::string serialize() const;
  static CsvMatrix parse(std::string_view text);
};

}  // namespace spe::harness
