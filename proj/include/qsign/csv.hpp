#pragma once

// Headerless numeric CSV: comma separated, one matrix row per line, one
// value per line for vectors. Blank lines are skipped; '\r' line endings and
// surrounding spaces are tolerated.

#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qsign/core.hpp"

namespace qsign {

class CsvError : public InvalidArgument {
 public:
  CsvError(const std::string& source, std::size_t line, const std::string& what)
      : InvalidArgument(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_cell(std::string_view cell, const std::string& source, std::size_t line) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size())
    throw CsvError(source, line, "not a number: '" + std::string(cell) + "'");
  if (!std::isfinite(v)) throw CsvError(source, line, "non-finite value '" + std::string(cell) + "'");
  return v;
}

}  // namespace detail

inline Matrix read_csv_matrix(std::istream& in, const std::string& source = "<input>") {
  std::vector<std::vector<double>> rows;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    const std::string_view body = detail::trim(text);
    if (body.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = body.find(',', start);
      row.push_back(detail::parse_cell(body.substr(start, comma - start), source, line));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw CsvError(source, line,
                     "expected " + std::to_string(rows.front().size()) + " values, found " +
                         std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw CsvError(source, line, "no data");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

/// A column (one value per line) or a single row.
inline Vector read_csv_vector(std::istream& in, const std::string& source = "<input>") {
  const Matrix m = read_csv_matrix(in, source);
  if (m.cols() == 1) return m.col(0);
  if (m.rows() == 1) return m.row(0).transpose();
  throw CsvError(source, 1,
                 "expected a vector, found a " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                     " matrix");
}

inline Matrix read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  return read_csv_matrix(in, path);
}

inline Vector read_csv_vector(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  return read_csv_vector(in, path);
}

}  // namespace qsign
