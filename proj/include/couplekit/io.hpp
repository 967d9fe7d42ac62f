#pragma once

#include <string>
#include <vector>

#include "couplekit/core.hpp"

namespace couplekit::io {

struct CsvTable {
  std::vector<std::string> header;  // empty when the file has no header row
  std::vector<std::vector<std::string>> rows;
};

/// Comma-separated values; a field may be wrapped in double quotes. Blank
/// lines are skipped.
CsvTable read_csv(const std::string& path);
CsvTable parse_csv(const std::string& text, const std::string& source = "<string>");

/// Numeric matrix from a CSV file. A leading non-numeric row is treated as a
/// header; errors cite file and line.
Matrix read_matrix_csv(const std::string& path, std::vector<std::string>* header = nullptr);

std::string read_file(const std::string& path);
/// Writes through a temporary file and renames it into place.
void write_file(const std::string& path, const std::string& content);
void ensure_directory(const std::string& path);
std::string join_path(const std::string& dir, const std::string& name);

/// Shortest decimal form that round-trips.
std::string format_double(double value);

}  // namespace couplekit::io
