#include "designz/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "designz/errors.hpp"

namespace designz {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, const std::string& where) {
  if (text.empty()) throw DataError(where + ": missing value");
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw DataError(where + ": '" + text + "' is not a finite decimal number");
  }
  return value;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == name) return j;
  }
  throw DataError("missing required column '" + name + "'");
}

CsvTable read_csv(std::istream& in, const std::string& source) {
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = split(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      for (const auto& h : table.header) {
        if (h.empty()) throw DataError(source + ": empty column name in header");
      }
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(table.header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    }
    std::vector<double> row(fields.size());
    for (std::size_t j = 0; j < fields.size(); ++j) {
      row[j] = parse_number(fields[j], source + ":" + std::to_string(line_no) + " column '" + table.header[j] + "'");
    }
    table.rows.push_back(std::move(row));
  }
  if (table.header.empty()) throw DataError(source + ": no header row");
  return table;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_csv(in, path);
}

namespace {

CovariateMatrix covariates(const CsvTable& t, const std::vector<std::size_t>& reserved) {
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (std::find(reserved.begin(), reserved.end(), j) == reserved.end()) cols.push_back(j);
  }
  CovariateMatrix x(t.rows.size(), cols.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) x(i, k) = t.rows[i][cols[k]];
  }
  return x;
}

}  // namespace

Dataset dataset_from_csv(const CsvTable& t) {
  const auto zc = t.column("z");
  const auto yc = t.column("y");
  std::vector<std::uint8_t> z(t.rows.size());
  Vector y(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double zi = t.rows[i][zc];
    if (zi != 0.0 && zi != 1.0) {
      throw DataError("row " + std::to_string(i + 1) + ": column 'z' must be 0 or 1");
    }
    z[i] = static_cast<std::uint8_t>(zi);
    y[i] = t.rows[i][yc];
  }
  try {
    return Dataset(Assignment(std::move(z)), std::move(y), covariates(t, {zc, yc}));
  } catch (const ArgumentError& e) {
    throw DataError(e.what());
  }
}

Dataset read_dataset_csv(const std::string& path) { return dataset_from_csv(read_csv_file(path)); }

PotentialTable potential_table_from_csv(const CsvTable& t) {
  const auto c1 = t.column("y1");
  const auto c0 = t.column("y0");
  Vector y1(t.rows.size());
  Vector y0(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    y1[i] = t.rows[i][c1];
    y0[i] = t.rows[i][c0];
  }
  try {
    return PotentialTable(std::move(y1), std::move(y0), covariates(t, {c1, c0}));
  } catch (const DegenerateInputError& e) {
    throw DataError(e.what());
  }
}

PotentialTable read_potential_csv(const std::string& path) { return potential_table_from_csv(read_csv_file(path)); }

}  // namespace designz
