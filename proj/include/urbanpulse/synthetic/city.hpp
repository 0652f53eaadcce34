#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "urbanpulse/mobility/types.hpp"
#include "urbanpulse/numerics/random.hpp"

// Seeded toy cities: clustered POIs, gravity-driven agents, and a weather series.
namespace urbanpulse::synthetic {

using mobility::GpsPoint;
using mobility::Poi;
using mobility::TypeMap;
using mobility::WeatherRecord;

inline std::vector<double> default_diurnal_profile() {
  return {0.15, 0.1, 0.1, 0.1, 0.15, 0.3, 0.7, 1.4, 1.8, 1.3, 0.9, 0.9,
          1.1,  1.0, 0.9, 1.0, 1.3, 1.7, 1.6, 1.2, 0.9, 0.6, 0.4, 0.25};
}

struct CityConfig {
  std::uint64_t seed = 7;
  std::size_t n_pois = 50;
  std::size_t n_agents = 500;
  double extent_km = 12.0;
  std::size_t n_intervals = 288;
  std::vector<double> diurnal_profile = default_diurnal_profile();
  double attraction_exponent = 1.5;
  double move_rate = 0.08;        // hop probability per interval at multiplier 1
  double burst_probability = 0.03;
  double origin_lat = 34.05;
  double origin_lon = -118.25;
  std::int64_t start_time = 1680307200;  // 2023-04-01T00:00:00Z
  std::int64_t interval_s = 900;

  void validate() const {
    if (n_pois < 2) throw std::invalid_argument("city: n_pois must be >= 2");
    if (n_intervals < 12) throw std::invalid_argument("city: n_intervals must be >= 12");
    if (diurnal_profile.size() != 24) throw std::invalid_argument("city: diurnal_profile needs 24 hourly entries");
    for (double m : diurnal_profile)
      if (!(m >= 0.0)) throw std::invalid_argument("city: diurnal multipliers must be nonnegative");
    if (!(extent_km > 0.0) || interval_s <= 0) throw std::invalid_argument("city: extent and interval must be positive");
    if (move_rate < 0.0 || burst_probability < 0.0 || burst_probability > 1.0)
      throw std::invalid_argument("city: rates must be nonnegative probabilities");
  }
};

inline const std::array<std::string, 6>& category_names() {
  static const std::array<std::string, 6> names{"residential", "office", "retail", "food", "education", "park"};
  return names;
}

struct City {
  std::vector<Poi> pois;
  TypeMap types;
  std::vector<double> attractiveness;
};

namespace detail {

using Rng = num::Rng;

constexpr double kKmPerDegLat = 111.32;

inline double km_per_deg_lon(double lat) { return kKmPerDegLat * std::cos(lat * 3.14159265358979323846 / 180.0); }

}  // namespace detail

// POIs placed around seeded cluster centres inside a square of side extent_km.
inline City generate_city(const CityConfig& config) {
  config.validate();
  detail::Rng rng(config.seed, 1);
  City city;
  for (const auto& name : category_names()) city.types.index_of(name);
  static const std::vector<double> type_weight{0.35, 0.15, 0.15, 0.15, 0.1, 0.1};
  static const std::vector<double> type_pull{0.8, 1.5, 1.3, 1.2, 1.0, 0.7};

  const std::size_t clusters = std::max<std::size_t>(1, config.n_pois / 10);
  std::vector<std::pair<double, double>> centres;
  for (std::size_t c = 0; c < clusters; ++c)
    centres.emplace_back(rng.uniform(0.15, 0.85) * config.extent_km, rng.uniform(0.15, 0.85) * config.extent_km);

  const double spread = config.extent_km / 10.0;
  for (std::size_t i = 0; i < config.n_pois; ++i) {
    const auto& [cx, cy] = centres[rng.index(clusters)];
    const double x = std::clamp(cx + spread * rng.normal(), 0.0, config.extent_km);
    const double y = std::clamp(cy + spread * rng.normal(), 0.0, config.extent_km);
    Poi p;
    p.poi_id = static_cast<std::uint32_t>(i);
    p.lat = config.origin_lat + y / detail::kKmPerDegLat;
    p.lon = config.origin_lon + x / detail::km_per_deg_lon(config.origin_lat);
    p.type_index = static_cast<std::uint32_t>(rng.categorical(type_weight));
    city.pois.push_back(p);
    city.attractiveness.push_back(type_pull[p.type_index] * std::exp(0.6 * rng.normal()));
  }
  return city;
}

// Unnormalized hop kernel attract_j / d_ij^alpha (d floored at 0.3 km); 0 on the diagonal.
inline std::vector<double> gravity_kernel(const CityConfig& config, const City& city) {
  const std::size_t n = city.pois.size();
  std::vector<double> k(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = std::max(0.3, mobility::poi_distance_km(city.pois[i], city.pois[j]));
      k[i * n + j] = city.attractiveness[j] / std::pow(d, config.attraction_exponent);
    }
  return k;
}

// Agents hop between POIs once per interval at most; each emits a first fix in
// the opening 30 s of the interval plus up to two later fixes before minute 5,
// at least 10 s apart and all within ~10 m of the occupied POI.
inline std::vector<GpsPoint> simulate_traces(const CityConfig& config, const City& city) {
  config.validate();
  detail::Rng rng(config.seed, 2);
  const std::size_t n = city.pois.size();
  const auto kernel = gravity_kernel(config, city);
  std::vector<std::vector<double>> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i].assign(kernel.begin() + i * n, kernel.begin() + (i + 1) * n);

  std::vector<std::size_t> at(config.n_agents);
  for (auto& a : at) a = rng.categorical(city.attractiveness);

  const double deg_lon = detail::km_per_deg_lon(config.origin_lat);
  std::vector<GpsPoint> points;
  points.reserve(config.n_agents * config.n_intervals * 2);
  for (std::size_t k = 0; k < config.n_intervals; ++k) {
    const std::int64_t begin = config.start_time + static_cast<std::int64_t>(k) * config.interval_s;
    const auto hour = static_cast<std::size_t>((begin / 3600) % 24);
    const double p_move = std::min(1.0, config.move_rate * config.diurnal_profile[hour]);
    for (std::size_t a = 0; a < config.n_agents; ++a) {
      if (k > 0 && p_move > 0.0 && rng.uniform() < p_move) at[a] = rng.categorical(rows[at[a]]);
      const Poi& poi = city.pois[at[a]];
      char id[32];
      std::snprintf(id, sizeof(id), "a%06zu", a);
      const std::size_t fixes = 1 + rng.index(3);
      std::vector<std::int64_t> offsets{static_cast<std::int64_t>(rng.index(30))};
      for (std::size_t f = 1; f < fixes; ++f) offsets.push_back(60 + static_cast<std::int64_t>(rng.index(240)));
      std::sort(offsets.begin() + 1, offsets.end());
      for (std::size_t f = 2; f < fixes; ++f) offsets[f] = std::max(offsets[f], offsets[f - 1] + 10);
      for (auto off : offsets) {
        GpsPoint p;
        p.user_id = id;
        p.timestamp = begin + off;
        p.lat = poi.lat + 0.01 * rng.normal() / detail::kKmPerDegLat;
        p.lon = poi.lon + 0.01 * rng.normal() / deg_lon;
        points.push_back(std::move(p));
      }
    }
  }
  return points;
}

// Diurnal temperature with AR(1) noise, sparse precipitation bursts (the first
// burst always peaks above the 50 mm/h cap), and bounded AR(1) wind.
inline std::vector<WeatherRecord> generate_weather(const CityConfig& config) {
  config.validate();
  detail::Rng rng(config.seed, 3);
  std::vector<WeatherRecord> out;
  double temp_noise = 0.0, east = 2.0, north = 1.0;
  std::size_t burst_left = 0, burst_len = 0;
  double burst_peak = 0.0;
  bool any_burst = false;
  const std::size_t forced_start = rng.index(config.n_intervals);
  for (std::size_t k = 0; k < config.n_intervals; ++k) {
    const double hours = static_cast<double>(config.start_time + static_cast<std::int64_t>(k) * config.interval_s) / 3600.0;
    temp_noise = 0.9 * temp_noise + 0.3 * rng.normal();
    WeatherRecord r;
    r.interval_index = static_cast<std::int64_t>(k);
    r.temperature = 15.0 + 7.0 * std::sin(2.0 * 3.14159265358979323846 * (std::fmod(hours, 24.0) - 9.0) / 24.0) + temp_noise;

    const bool start = burst_left == 0 && config.burst_probability > 0.0 &&
                       (rng.uniform() < config.burst_probability || (!any_burst && k >= forced_start));
    if (start) {
      burst_len = burst_left = 2 + rng.index(7);
      burst_peak = any_burst ? rng.uniform(1.0, 90.0) : rng.uniform(55.0, 90.0);
      any_burst = true;
    }
    if (burst_left > 0) {
      const double phase = static_cast<double>(burst_len - burst_left) / static_cast<double>(std::max<std::size_t>(1, burst_len - 1));
      r.precipitation = burst_peak * (phase <= 0.5 ? 1.0 : 1.0 - (phase - 0.5));
      --burst_left;
    }
    east = std::clamp(0.95 * east + 0.1 + 0.6 * rng.normal(), -12.0, 12.0);
    north = std::clamp(0.95 * north + 0.05 + 0.6 * rng.normal(), -12.0, 12.0);
    r.wind_east = east;
    r.wind_north = north;
    out.push_back(r);
  }
  return out;
}

}  // namespace urbanpulse::synthetic
