#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "topicforge/error.hpp"
#include "topicforge/matrix.hpp"

namespace topicforge {

using json = nlohmann::json;

/// Numeric CSV fields use 9 significant digits, dot decimal separator.
inline std::string format_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.emplace_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), Errc::IoError, "cannot write " + path.string());
  out << content;
  require(out.good(), Errc::IoError, "write failed for " + path.string());
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::IoError, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    require(pos == s.size(), Errc::FormatError, context + ": trailing characters in '" + s + "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(Errc::FormatError, context + ": not a number: '" + s + "'");
  }
}

inline std::int64_t parse_int(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    std::int64_t v = std::stoll(s, &pos);
    require(pos == s.size(), Errc::FormatError, context + ": trailing characters in '" + s + "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(Errc::FormatError, context + ": not an integer: '" + s + "'");
  }
}

inline std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// FNV-1a content digest, hex-encoded; used for input provenance in manifests.
inline std::string file_digest(const std::filesystem::path& path) {
  const std::string content = read_text_file(path);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx",
                static_cast<unsigned long long>(fnv1a64(content)));
  return buf;
}

inline std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  out.reserve(m.rows() * m.cols() * 12);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c != 0) out += ',';
      out += format_g9(m(r, c));
    }
    out += '\n';
  }
  return out;
}

inline Matrix matrix_from_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split_csv_line(lines[i]);
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_double(f, path.string()));
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), Errc::FormatError, "empty matrix file " + path.string());
  return Matrix::from_rows(rows);
}

inline json load_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    fail(Errc::FormatError, path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace topicforge
