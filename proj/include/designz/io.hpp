#pragma once

#include <istream>
#include <string>
#include <vector>

#include "designz/finitepop.hpp"

namespace designz {

/// Parsed comma-separated table: header names plus numeric rows.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of a named column; throws DataError naming the column when absent.
  std::size_t column(const std::string& name) const;
};

/// Reads a UTF-8, comma-separated numeric table with a header row.
/// Empty fields, non-numeric fields and ragged rows are hard errors.
CsvTable read_csv(std::istream& in, const std::string& source = "<stream>");
CsvTable read_csv_file(const std::string& path);

/// Observed data: header `z,y,x1,...,xd`.
Dataset dataset_from_csv(const CsvTable& table);
Dataset read_dataset_csv(const std::string& path);

/// Oracle population: header `y1,y0,x1,...,xd`.
PotentialTable potential_table_from_csv(const CsvTable& table);
PotentialTable read_potential_csv(const std::string& path);

}  // namespace designz
