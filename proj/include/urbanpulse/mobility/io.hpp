#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbanpulse/mobility/types.hpp"

namespace urbanpulse::mobility {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io_detail {

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(sep, pos);
    out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

template <typename T>
bool parse(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

inline std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

// Reads the header line and checks it against `expected`.
inline void expect_header(std::istream& in, std::string_view expected, const std::filesystem::path& path) {
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    if (trim(line) != expected)
      throw FormatError(path.string() + ": expected header '" + std::string(expected) + "', got '" + line + "'");
    return;
  }
  throw FormatError(path.string() + ": missing header '" + std::string(expected) + "'");
}

}  // namespace io_detail

struct ReadStats {
  std::size_t rows = 0;
  std::size_t malformed = 0;
};

// GPS CSV `user_id,timestamp,lat,lon`. Malformed rows are counted and skipped.
inline std::vector<GpsPoint> read_gps_csv(const std::filesystem::path& path, ReadStats* stats = nullptr) {
  auto in = io_detail::open_in(path);
  io_detail::expect_header(in, "user_id,timestamp,lat,lon", path);
  ReadStats local;
  std::vector<GpsPoint> points;
  std::string line;
  while (std::getline(in, line)) {
    if (io_detail::trim(line).empty()) continue;
    ++local.rows;
    const auto cols = io_detail::split(line);
    GpsPoint p;
    if (cols.size() != 4 || !io_detail::parse(cols[1], p.timestamp) || !io_detail::parse(cols[2], p.lat) ||
        !io_detail::parse(cols[3], p.lon) || io_detail::trim(cols[0]).empty()) {
      ++local.malformed;
      continue;
    }
    p.user_id = std::string(io_detail::trim(cols[0]));
    if (!well_formed(p)) {
      ++local.malformed;
      continue;
    }
    points.push_back(std::move(p));
  }
  if (stats) *stats = local;
  return points;
}

inline void write_gps_csv(const std::filesystem::path& path, std::span<const GpsPoint> points) {
  auto out = io_detail::open_out(path);
  out << "user_id,timestamp,lat,lon\n";
  for (const auto& p : points)
    out << p.user_id << ',' << p.timestamp << ',' << io_detail::fmt(p.lat) << ',' << io_detail::fmt(p.lon) << '\n';
}

// POI CSV `poi_id,lat,lon,type`. Types are mapped through `types` (extended in
// first-seen order). Result is sorted by poi_id, which must be dense 0..N-1.
inline std::vector<Poi> read_poi_csv(const std::filesystem::path& path, TypeMap& types) {
  auto in = io_detail::open_in(path);
  io_detail::expect_header(in, "poi_id,lat,lon,type", path);
  std::vector<Poi> pois;
  std::string line;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (io_detail::trim(line).empty()) continue;
    const auto cols = io_detail::split(line);
    Poi p;
    if (cols.size() != 4 || !io_detail::parse(cols[0], p.poi_id) || !io_detail::parse(cols[1], p.lat) ||
        !io_detail::parse(cols[2], p.lon) || io_detail::trim(cols[3]).empty())
      throw FormatError(path.string() + ":" + std::to_string(row) + ": malformed POI row");
    p.type_index = types.index_of(std::string(io_detail::trim(cols[3])));
    pois.push_back(p);
  }
  std::sort(pois.begin(), pois.end(), [](const Poi& a, const Poi& b) { return a.poi_id < b.poi_id; });
  for (std::size_t i = 0; i < pois.size(); ++i)
    if (pois[i].poi_id != i) throw FormatError(path.string() + ": poi_id values must be dense 0..N-1");
  if (pois.size() < 2) throw FormatError(path.string() + ": need at least two POIs");
  return pois;
}

inline void write_poi_csv(const std::filesystem::path& path, std::span<const Poi> pois, const TypeMap& types) {
  auto out = io_detail::open_out(path);
  out << "poi_id,lat,lon,type\n";
  for (const auto& p : pois)
    out << p.poi_id << ',' << io_detail::fmt(p.lat) << ',' << io_detail::fmt(p.lon) << ','
        << types.names().at(p.type_index) << '\n';
}

inline std::vector<WeatherRecord> read_weather_csv(const std::filesystem::path& path) {
  auto in = io_detail::open_in(path);
  io_detail::expect_header(in, "interval_index,temperature,precipitation,wind_east,wind_north", path);
  std::vector<WeatherRecord> records;
  std::string line;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (io_detail::trim(line).empty()) continue;
    const auto cols = io_detail::split(line);
    WeatherRecord r;
    if (cols.size() != 5 || !io_detail::parse(cols[0], r.interval_index) || !io_detail::parse(cols[1], r.temperature) ||
        !io_detail::parse(cols[2], r.precipitation) || !io_detail::parse(cols[3], r.wind_east) ||
        !io_detail::parse(cols[4], r.wind_north))
      throw FormatError(path.string() + ":" + std::to_string(row) + ": malformed weather row");
    records.push_back(r);
  }
  return records;
}

inline void write_weather_csv(const std::filesystem::path& path, std::span<const WeatherRecord> records) {
  auto out = io_detail::open_out(path);
  out << "interval_index,temperature,precipitation,wind_east,wind_north\n";
  for (const auto& r : records)
    out << r.interval_index << ',' << io_detail::fmt(r.temperature) << ',' << io_detail::fmt(r.precipitation) << ','
        << io_detail::fmt(r.wind_east) << ',' << io_detail::fmt(r.wind_north) << '\n';
}

// JSON-lines snapshot store: {"t":int,"pop":[...],"edges":[[i,j,w],...]}
inline std::string snapshot_to_json(const Snapshot& s) {
  nlohmann::ordered_json j;
  j["t"] = s.t;
  j["pop"] = s.populations;
  auto edges = nlohmann::ordered_json::array();
  for (const auto& e : s.edges) edges.push_back({e.src, e.dst, e.weight});
  j["edges"] = std::move(edges);
  return j.dump();
}

inline Snapshot snapshot_from_json(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  Snapshot s;
  s.t = j.at("t").get<std::int64_t>();
  s.populations = j.at("pop").get<std::vector<std::uint32_t>>();
  for (const auto& e : j.at("edges")) {
    if (e.size() != 3) throw FormatError("snapshot edge must be [i,j,w]");
    Edge edge{e[0].get<std::uint32_t>(), e[1].get<std::uint32_t>(), e[2].get<std::uint32_t>()};
    if (edge.weight < 1) throw FormatError("snapshot edge weight must be >= 1");
    s.edges.push_back(edge);
  }
  return s;
}

inline void write_snapshots(const std::filesystem::path& path, std::span<const Snapshot> snapshots) {
  auto out = io_detail::open_out(path);
  for (const auto& s : snapshots) out << snapshot_to_json(s) << '\n';
}

inline std::vector<Snapshot> read_snapshots(const std::filesystem::path& path) {
  auto in = io_detail::open_in(path);
  std::vector<Snapshot> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (io_detail::trim(line).empty()) continue;
    try {
      out.push_back(snapshot_from_json(line));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(row) + ": " + e.what());
    }
  }
  return out;
}

inline void write_type_map(const std::filesystem::path& path, const TypeMap& types) {
  auto out = io_detail::open_out(path);
  out << nlohmann::json(types.names()).dump() << '\n';
}

inline TypeMap read_type_map(const std::filesystem::path& path) {
  auto in = io_detail::open_in(path);
  TypeMap types;
  for (const auto& name : nlohmann::json::parse(in).get<std::vector<std::string>>()) types.index_of(name);
  return types;
}

}  // namespace urbanpulse::mobility
