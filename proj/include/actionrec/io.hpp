#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "actionrec/errors.hpp"

namespace actionrec {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-temp-then-rename so readers never observe a partial artifact.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string());
}

inline Json load_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Rejects documents without the expected kind / schema version.
inline void check_schema(const Json& doc, const std::string& kind) {
  if (!doc.is_object() || !doc.contains("schema_version") || !doc.contains("kind"))
    throw FormatError("missing schema_version/kind (expected " + kind + ")");
  if (doc.at("kind") != kind)
    throw FormatError("expected kind '" + kind + "', got " + doc.at("kind").dump());
  if (doc.at("schema_version") != kSchemaVersion)
    throw FormatError("unsupported schema_version " + doc.at("schema_version").dump());
}

// Minimal CSV helpers: comma separated, no quoting. The artifacts written by
// this library never contain commas inside fields.
inline std::vector<std::string> split_csv_line(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::filesystem::path& path, char sep = ',') {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line, sep);
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != table.header.size())
        throw FormatError(path.string() + ": row has " + std::to_string(fields.size()) +
                          " fields, header has " + std::to_string(table.header.size()));
      table.rows.push_back(std::move(fields));
    }
  }
  if (first) throw FormatError(path.string() + ": empty CSV");
  return table;
}

inline double parse_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw FormatError("trailing characters in number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("not a number: '" + s + "'");
  }
}

}  // namespace actionrec
