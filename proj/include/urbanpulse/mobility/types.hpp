#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace urbanpulse::mobility {

inline constexpr double kEarthRadiusKm = 6371.0;

struct GpsPoint {
  std::string user_id;
  std::int64_t timestamp = 0;  // UTC epoch seconds
  double lat = 0.0;
  double lon = 0.0;
};

inline bool well_formed(const GpsPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 && p.lon >= -180.0 &&
         p.lon <= 180.0 && !p.user_id.empty();
}

struct Poi {
  std::uint32_t poi_id = 0;
  double lat = 0.0;
  double lon = 0.0;
  std::uint32_t type_index = 0;
};

struct WeatherRecord {
  std::int64_t interval_index = 0;
  double temperature = 0.0;    // deg C
  double precipitation = 0.0;  // mm/h
  double wind_east = 0.0;      // m/s
  double wind_north = 0.0;     // m/s

  double wind_speed() const { return std::hypot(wind_east, wind_north); }
};

struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  std::uint32_t weight = 0;

  bool operator==(const Edge&) const = default;
};

using EdgeKey = std::pair<std::uint32_t, std::uint32_t>;

// The directed mobility graph of one interval. Edges are sorted by (src, dst)
// with one entry per ordered pair and weight >= 1.
struct Snapshot {
  std::int64_t t = 0;
  std::vector<std::uint32_t> populations;
  std::vector<Edge> edges;

  bool operator==(const Snapshot&) const = default;
};

// Dense POI-type indices in first-seen order.
class TypeMap {
 public:
  std::uint32_t index_of(const std::string& name) {
    auto it = lookup_.find(name);
    if (it != lookup_.end()) return it->second;
    const auto idx = static_cast<std::uint32_t>(names_.size());
    names_.push_back(name);
    lookup_.emplace(name, idx);
    return idx;
  }

  std::uint32_t at(const std::string& name) const {
    auto it = lookup_.find(name);
    if (it == lookup_.end()) throw std::out_of_range("unknown POI type '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::uint32_t> lookup_;
};

// Great-circle distance in km (haversine).
inline double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double kRad = 3.14159265358979323846 / 180.0;
  const double dlat = (lat2 - lat1) * kRad;
  const double dlon = (lon2 - lon1) * kRad;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(lat1 * kRad) * std::cos(lat2 * kRad) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(std::min(1.0, h)));
}

inline double poi_distance_km(const Poi& a, const Poi& b) { return haversine_km(a.lat, a.lon, b.lat, b.lon); }

}  // namespace urbanpulse::mobility
