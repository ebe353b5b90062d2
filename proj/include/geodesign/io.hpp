#ifndef GEODESIGN_IO_HPP
#define GEODESIGN_IO_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "geodesign/error.hpp"
#include "geodesign/spatial.hpp"

namespace geodesign {

// 64-bit FNV-1a of raw bytes, as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Tab-separated tables
// ---------------------------------------------------------------------------

// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (*b == '+') ++b;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) return std::nullopt;
  return v;
}

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw DataError("table has no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }

  void add(std::vector<std::string> row) {
    if (row.size() != columns.size())
      throw DataError("row has " + std::to_string(row.size()) + " fields, table has " +
                      std::to_string(columns.size()) + " columns");
    rows.push_back(std::move(row));
  }

  double number(std::size_t row, const std::string& col) const {
    const auto v = parse_double(rows.at(row).at(column(col)));
    if (!v)
      throw DataError("row " + std::to_string(row + 2) + ": column '" + col + "' is not numeric");
    return *v;
  }
};

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  if (line.empty()) out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string to_text(const Table& t) {
  std::string out;
  auto line = [&out](const std::vector<std::string>& f) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (i) out += '\t';
      out += f[i];
    }
    out += '\n';
  };
  line(t.columns);
  for (const auto& r : t.rows) line(r);
  return out;
}

inline Table parse_table(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  Table t;
  if (!std::getline(is, line)) throw DataError("table is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.columns = split(line, '\t');
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();  // tabs are significant
    if (trim(line).empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != t.columns.size())
      throw DataError("table line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                      " fields, expected " + std::to_string(t.columns.size()));
    t.rows.push_back(std::move(f));
  }
  return t;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

inline Table read_table(const std::string& path) { return parse_table(read_file(path)); }
inline void write_table(const std::string& path, const Table& t) { write_file(path, to_text(t)); }

// ---------------------------------------------------------------------------
// Monitoring stations
// ---------------------------------------------------------------------------

struct StationRecord {
  std::string station_id;
  double x_utm = 0.0;
  double y_utm = 0.0;
  std::vector<double> covariates;  // x1, x2, x3
  std::optional<double> y1;
  std::optional<long long> y2;
  bool sampled = false;
  std::string cluster;  // optional column
};

inline constexpr const char* kStationHeader = "station_id,x_utm,y_utm,x1,x2,x3,y1,y2,sampled";

struct StationIngest {
  std::vector<StationRecord> records;
  std::size_t sampled_count = 0;
  std::vector<std::string> warnings;
};

inline StationIngest parse_stations(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  StationIngest out;
  if (!std::getline(is, line)) throw DataError("station file is empty (no header row)");
  line = trim(line);
  bool has_cluster = false;
  if (line == std::string(kStationHeader) + ",cluster") {
    has_cluster = true;
  } else if (line != kStationHeader) {
    throw DataError(std::string("station header must be '") + kStationHeader +
                    "' (optionally followed by ',cluster')");
  }
  const std::size_t width = has_cluster ? 10 : 9;
  std::set<std::string> ids;
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    const std::string where = "row " + std::to_string(row);
    if (f.size() != width)
      throw DataError(where + ": expected " + std::to_string(width) + " fields, found " +
                      std::to_string(f.size()));
    StationRecord r;
    r.station_id = trim(f[0]);
    if (r.station_id.empty()) throw DataError(where + ": empty station_id");
    if (!ids.insert(r.station_id).second)
      throw DataError(where + ": duplicate station_id '" + r.station_id + "'");
    auto num = [&](std::size_t i, const char* name) {
      const auto v = parse_double(trim(f[i]));
      if (!v || !std::isfinite(*v))
        throw DataError(where + ": field '" + name + "' is not a finite number");
      return *v;
    };
    r.x_utm = num(1, "x_utm");
    r.y_utm = num(2, "y_utm");
    r.covariates = {num(3, "x1"), num(4, "x2"), num(5, "x3")};
    const std::string s = trim(f[8]);
    if (s == "1" || s == "true" || s == "TRUE")
      r.sampled = true;
    else if (s == "0" || s == "false" || s == "FALSE")
      r.sampled = false;
    else
      throw DataError(where + ": field 'sampled' must be 0/1 or true/false");
    const std::string t1 = trim(f[6]), t2 = trim(f[7]);
    if (!t1.empty()) r.y1 = num(6, "y1");
    if (!t2.empty()) {
      const double v = num(7, "y2");
      if (v < 0 || v != std::floor(v))
        throw DataError(where + ": field 'y2' must be a non-negative integer");
      r.y2 = static_cast<long long>(v);
    }
    if (r.sampled && (!r.y1 || !r.y2))
      throw DataError(where + ": sampled station '" + r.station_id + "' is missing y1 or y2");
    if (has_cluster) r.cluster = trim(f[9]);
    if (r.sampled) ++out.sampled_count;
    out.records.push_back(std::move(r));
  }
  if (out.records.empty()) out.warnings.push_back("station file has a header but no rows");
  return out;
}

inline StationIngest ingest_stations(const std::string& path) {
  return parse_stations(read_file(path));
}

// Maps coordinates to the unit box by one common scale, so distances keep
// their proportions: u = (x - x0) / scale, v = (y - y0) / scale.
struct AffineMap {
  double x0 = 0.0;
  double y0 = 0.0;
  double scale = 1.0;

  static AffineMap fit(const std::vector<StationRecord>& s) {
    if (s.empty()) return {};
    double xmin = s[0].x_utm, xmax = xmin, ymin = s[0].y_utm, ymax = ymin;
    for (const auto& r : s) {
      xmin = std::min(xmin, r.x_utm);
      xmax = std::max(xmax, r.x_utm);
      ymin = std::min(ymin, r.y_utm);
      ymax = std::max(ymax, r.y_utm);
    }
    const double scale = std::max(xmax - xmin, ymax - ymin);
    return {xmin, ymin, scale > 0.0 ? scale : 1.0};
  }

  std::pair<double, double> to_unit(double x, double y) const {
    return {(x - x0) / scale, (y - y0) / scale};
  }
  std::pair<double, double> from_unit(double u, double v) const {
    return {x0 + u * scale, y0 + v * scale};
  }
};

inline Location station_location(const StationRecord& r, const AffineMap& map) {
  const auto [u, v] = map.to_unit(r.x_utm, r.y_utm);
  return {u, v, r.covariates};
}

}  // namespace geodesign

#endif  // GEODESIGN_IO_HPP
