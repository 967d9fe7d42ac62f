#include "couplekit/io.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "couplekit/error.hpp"

namespace couplekit::io {

namespace {

std::vector<std::string> split_line(const std::string& line, const std::string& source, std::size_t lineno) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw ValidationError(source + ":" + std::to_string(lineno) + ": unterminated quote");
  out.push_back(field);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool parse_number(const std::string& text, double& value) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, t.data() + t.size(), value);
  return res.ec == std::errc() && res.ptr == t.data() + t.size();
}

}  // namespace

CsvTable parse_csv(const std::string& text, const std::string& source) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line) == "\r") continue;
    table.rows.push_back(split_line(line, source, lineno));
  }
  return table;
}

CsvTable read_csv(const std::string& path) { return parse_csv(read_file(path), path); }

Matrix read_matrix_csv(const std::string& path, std::vector<std::string>* header) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::vector<double>> rows;
  std::size_t width = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line) == "\r") continue;
    const auto fields = split_line(line, path, lineno);
    std::vector<double> values(fields.size());
    bool numeric = true;
    for (std::size_t j = 0; j < fields.size(); ++j) numeric = numeric && parse_number(fields[j], values[j]);
    if (first) {
      first = false;
      width = fields.size();
      if (!numeric) {
        if (header) {
          header->clear();
          for (const auto& f : fields) header->push_back(trim(f));
        }
        continue;
      }
    }
    if (fields.size() != width) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) + " fields, found " +
                            std::to_string(fields.size()));
    }
    if (!numeric) throw ValidationError(path + ":" + std::to_string(lineno) + ": non-numeric value");
    for (double v : values)
      if (!std::isfinite(v)) throw ValidationError(path + ":" + std::to_string(lineno) + ": non-finite value");
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ValidationError(path + ": no data rows");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out << content;
    if (!out) throw ValidationError("write failed for '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ValidationError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

void ensure_directory(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw ValidationError("cannot create directory '" + path + "': " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

}  // namespace couplekit::io
