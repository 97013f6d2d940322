#include "spe/harness/csv.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>

#include "spe/errors.hpp"

namespace spe::harness {
namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  }
  return lines;
}

bool is_comment(std::string_view line) { return !line.empty() && line.front() == '#'; }

std::string comment_body(std::string_view line) {
  line.remove_prefix(1);
  if (!line.empty() && line.front() == ' ') line.remove_prefix(1);
  return std::string(line);
}

}  // namespace

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.8e", value);
  return buf;
}

std::string format_number(Index value) { return std::to_string(value); }

double parse_number(std::string_view text, long line) {
  const std::string s(trim(text));
  if (s.empty()) throw ParseError("empty numeric field", line);
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw ParseError("not a number: '" + s + "'", line);
  if (errno == ERANGE && std::isinf(v)) throw ParseError("number out of range: '" + s + "'", line);
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos
                                                                             : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != columns.size()) {
    throw ShapeError("csv row has " + std::to_string(cells.size()) + " cells, table has " +
                     std::to_string(columns.size()) + " columns");
  }
  rows.push_back(std::move(cells));
}

std::string CsvTable::serialize() const {
  std::ostringstream os;
  for (const auto& c : comments) os << "# " << c << '\n';
  for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
  os << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
  for (const auto& c : trailer) os << "# " << c << '\n';
  return os.str();
}

CsvTable CsvTable::parse(std::string_view text) {
  CsvTable t;
  bool have_header = false;
  long line_no = 0;
  for (std::string_view line : split_lines(text)) {
    ++line_no;
    if (is_comment(line)) {
      (have_header ? t.trailer : t.comments).push_back(comment_body(line));
      continue;
    }
    if (trim(line).empty()) continue;
    if (!have_header) {
      t.columns = split_fields(line);
      have_header = true;
      continue;
    }
    if (!t.trailer.empty()) throw ParseError("data row after trailing comments", line_no);
    auto cells = split_fields(line);
    if (cells.size() != t.columns.size()) {
      throw ParseError("expected " + std::to_string(t.columns.size()) + " fields, found " +
                           std::to_string(cells.size()),
                       line_no);
    }
    t.rows.push_back(std::move(cells));
  }
  if (!have_header) throw ParseError("csv table has no header row", 0);
  return t;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw ParseError("no column named '" + std::string(name) + "'", 0);
}

double CsvTable::number(std::size_t row, std::string_view name) const {
  return parse_number(rows.at(row).at(column(name)));
}

std::string CsvMatrix::serialize() const {
  std::ostringstream os;
  os << "# rows=" << values.rows() << '\n' << "# cols=" << values.cols() << '\n';
  for (const auto& c : comments) os << "# " << c << '\n';
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) os << (j ? "," : "") << format_number(values(i, j));
    os << '\n';
  }
  return os.str();
}

CsvMatrix CsvMatrix::parse(std::string_view text) {
  CsvMatrix out;
  long rows = -1;
  long cols = -1;
  std::vector<std::vector<double>> data;
  long line_no = 0;
  for (std::string_view line : split_lines(text)) {
    ++line_no;
    if (is_comment(line)) {
      const std::string body = comment_body(line);
      if (body.rfind("rows=", 0) == 0) {
        rows = static_cast<long>(parse_number(std::string_view(body).substr(5), line_no));
      } else if (body.rfind("cols=", 0) == 0) {
        cols = static_cast<long>(parse_number(std::string_view(body).substr(5), line_no));
      } else {
        out.comments.push_back(body);
      }
      continue;
    }
    if (trim(line).empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split_fields(line)) row.push_back(parse_number(cell, line_no));
    if (cols >= 0 && static_cast<long>(row.size()) != cols) {
      throw ParseError("expected " + std::to_string(cols) + " columns, found " +
                           std::to_string(row.size()),
                       line_no);
    }
    if (!data.empty() && row.size() != data.front().size()) {
      throw ParseError("ragged matrix row", line_no);
    }
    data.push_back(std::move(row));
  }
  if (rows >= 0 && static_cast<long>(data.size()) != rows) {
    throw ParseError("expected " + std::to_string(rows) + " rows, found " +
                         std::to_string(data.size()),
                     0);
  }
  const Index r = static_cast<Index>(data.size());
  const Index c = data.empty() ? std::max<long>(cols, 0) : static_cast<Index>(data.front().size());
  out.values.resize(r, c);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) out.values(i, j) = data[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return out;
}

}  // namespace spe::harness
