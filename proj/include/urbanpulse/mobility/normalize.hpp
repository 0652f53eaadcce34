#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "urbanpulse/mobility/types.hpp"

namespace urbanpulse::mobility {

inline constexpr std::size_t kFeatureSlots = 7;  // type, lat, lon, population, temperature, precipitation, wind
inline constexpr double kPrecipitationCap = 50.0;

struct Range {
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();

  void include(double v) {
    min = std::min(min, v);
    max = std::max(max, v);
  }

  // Min-max scaling clipped to [0,1]; a degenerate range maps everything to 0.
  double scale(double v) const {
    if (!(max > min)) return 0.0;
    return std::clamp((v - min) / (max - min), 0.0, 1.0);
  }

  bool operator==(const Range&) const = default;
};

// Precipitation after capping and log1p, before min-max scaling.
inline double precipitation_transform(double mm_per_h) {
  return std::log1p(std::min(std::max(mm_per_h, 0.0), kPrecipitationCap));
}

// Min/max per continuous feature, from a training split only.
struct NormStats {
  Range lat, lon, population, temperature, precipitation, wind;
  double flow_max = 1.0;  // largest training edge weight; flows are trained as w / flow_max

  bool operator==(const NormStats&) const = default;
};

// Fills missing intervals by carrying the previous record forward (the first
// available record covers any leading gap).
inline std::vector<WeatherRecord> align_weather(std::span<const WeatherRecord> records, std::size_t n_intervals) {
  if (records.empty()) throw std::invalid_argument("weather series is empty");
  std::vector<const WeatherRecord*> slot(n_intervals, nullptr);
  for (const auto& r : records)
    if (r.interval_index >= 0 && static_cast<std::size_t>(r.interval_index) < n_intervals)
      slot[static_cast<std::size_t>(r.interval_index)] = &r;
  const WeatherRecord* carry = &*std::min_element(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.interval_index < b.interval_index;
  });
  std::vector<WeatherRecord> out(n_intervals);
  for (std::size_t k = 0; k < n_intervals; ++k) {
    if (slot[k]) carry = slot[k];
    out[k] = *carry;
    out[k].interval_index = static_cast<std::int64_t>(k);
  }
  return out;
}

// `weather` is indexed by interval and must cover every training snapshot.
inline NormStats compute_norm_stats(std::span<const Poi> pois, std::span<const Snapshot> train,
                                    std::span<const WeatherRecord> weather) {
  if (train.empty()) throw std::invalid_argument("normalization statistics need a nonempty training split");
  NormStats s;
  for (const auto& p : pois) {
    s.lat.include(p.lat);
    s.lon.include(p.lon);
  }
  std::uint32_t flow_max = 0;
  for (const auto& snap : train) {
    for (auto v : snap.populations) s.population.include(static_cast<double>(v));
    for (const auto& e : snap.edges) flow_max = std::max(flow_max, e.weight);
    const auto& w = weather[static_cast<std::size_t>(snap.t)];
    s.temperature.include(w.temperature);
    s.precipitation.include(precipitation_transform(w.precipitation));
    s.wind.include(w.wind_speed());
  }
  s.flow_max = flow_max > 0 ? static_cast<double>(flow_max) : 1.0;
  return s;
}

// Node feature rows [N x 7] for one snapshot. Slot 0 carries the raw type index.
inline std::vector<double> normalize(const Snapshot& snap, std::span<const Poi> pois, const WeatherRecord& weather,
                                     const NormStats& stats) {
  const std::size_t n = pois.size();
  if (snap.populations.size() != n) throw std::invalid_argument("snapshot population count does not match POI count");
  const double temp = stats.temperature.scale(weather.temperature);
  const double precip = stats.precipitation.scale(precipitation_transform(weather.precipitation));
  const double wind = stats.wind.scale(weather.wind_speed());
  std::vector<double> rows(n * kFeatureSlots);
  for (std::size_t i = 0; i < n; ++i) {
    double* r = rows.data() + i * kFeatureSlots;
    r[0] = static_cast<double>(pois[i].type_index);
    r[1] = stats.lat.scale(pois[i].lat);
    r[2] = stats.lon.scale(pois[i].lon);
    r[3] = stats.population.scale(static_cast<double>(snap.populations[i]));
    r[4] = temp;
    r[5] = precip;
    r[6] = wind;
  }
  return rows;
}

// (D_out + I)^-1 (A_w + I), row-major [N x N]. Rows sum to 1; direction is kept.
inline std::vector<double> normalized_adjacency(const Snapshot& snap, std::size_t n) {
  std::vector<double> a(n * n, 0.0);
  std::vector<double> degree(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
  for (const auto& e : snap.edges) {
    if (e.src >= n || e.dst >= n) throw std::out_of_range("edge endpoint outside the POI set");
    a[e.src * n + e.dst] += static_cast<double>(e.weight);
    degree[e.src] += static_cast<double>(e.weight);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] /= degree[i];
  return a;
}

}  // namespace urbanpulse::mobility
