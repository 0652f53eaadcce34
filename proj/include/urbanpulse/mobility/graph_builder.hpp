#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "urbanpulse/mobility/types.hpp"

namespace urbanpulse::mobility {

struct CleanStats {
  std::size_t malformed = 0;
  std::size_t dropped_speed = 0;
  std::size_t kept = 0;
};

// Speed-based outlier removal. Output is ordered by (user_id, timestamp);
// the first well-formed point of each user is always kept.
inline std::vector<GpsPoint> clean_traces(std::vector<GpsPoint> points, double max_speed_kmh,
                                          CleanStats* stats = nullptr) {
  CleanStats local;
  std::erase_if(points, [&](const GpsPoint& p) {
    const bool bad = !well_formed(p);
    local.malformed += bad;
    return bad;
  });
  std::stable_sort(points.begin(), points.end(), [](const GpsPoint& a, const GpsPoint& b) {
    if (a.user_id != b.user_id) return a.user_id < b.user_id;
    return a.timestamp < b.timestamp;
  });
  std::vector<GpsPoint> kept;
  kept.reserve(points.size());
  for (auto& p : points) {
    if (!kept.empty() && kept.back().user_id == p.user_id) {
      const auto& prev = kept.back();
      const double km = haversine_km(prev.lat, prev.lon, p.lat, p.lon);
      const double hours = static_cast<double>(p.timestamp - prev.timestamp) / 3600.0;
      const double speed = hours > 0.0 ? km / hours : (km > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
      if (speed > max_speed_kmh) {
        ++local.dropped_speed;
        continue;
      }
    }
    kept.push_back(std::move(p));
  }
  local.kept = kept.size();
  if (stats) *stats = local;
  return kept;
}

// Nearest-POI lookup by great-circle distance. POIs are swept outward in
// latitude order; R*|dlat| lower-bounds the haversine distance, which prunes
// the sweep. Ties go to the lowest poi_id.
class PoiIndex {
 public:
  explicit PoiIndex(std::span<const Poi> pois) : pois_(pois.begin(), pois.end()) {
    if (pois_.empty()) throw std::invalid_argument("PoiIndex: empty POI set");
    order_.resize(pois_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
      return pois_[a].lat != pois_[b].lat ? pois_[a].lat < pois_[b].lat : pois_[a].poi_id < pois_[b].poi_id;
    });
    lats_.reserve(order_.size());
    for (auto i : order_) lats_.push_back(pois_[i].lat);
  }

  std::uint32_t nearest(double lat, double lon) const {
    constexpr double kRad = 3.14159265358979323846 / 180.0;
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_id = std::numeric_limits<std::uint32_t>::max();
    auto consider = [&](std::size_t slot) {
      const Poi& p = pois_[order_[slot]];
      const double d = haversine_km(lat, lon, p.lat, p.lon);
      if (d < best || (d == best && p.poi_id < best_id)) {
        best = d;
        best_id = p.poi_id;
      }
    };
    auto pruned = [&](std::size_t slot) {
      const double bound = kEarthRadiusKm * std::fabs(lats_[slot] - lat) * kRad;
      return bound > best * (1.0 + 1e-9) + 1e-12;
    };
    const auto mid = static_cast<std::size_t>(std::lower_bound(lats_.begin(), lats_.end(), lat) - lats_.begin());
    std::size_t up = mid;
    std::size_t down = mid;
    bool up_open = up < lats_.size();
    bool down_open = down > 0;
    while (up_open || down_open) {
      if (up_open) {
        if (pruned(up)) {
          up_open = false;
        } else {
          consider(up);
          up_open = ++up < lats_.size();
        }
      }
      if (down_open) {
        if (pruned(down - 1)) {
          down_open = false;
        } else {
          consider(down - 1);
          down_open = --down > 0;
        }
      }
    }
    return best_id;
  }

  std::size_t size() const { return pois_.size(); }

 private:
  std::vector<Poi> pois_;
  std::vector<std::size_t> order_;
  std::vector<double> lats_;
};

struct UserAssignment {
  std::string user_id;
  std::uint32_t poi = 0;
  std::int64_t timestamp = 0;  // first observation in the interval
};

// One assignment per user: the POI nearest to the user's first observation.
// Result is sorted by user_id. `points` must already be filtered to the interval.
inline std::vector<UserAssignment> assign_users(std::span<const GpsPoint> points, const PoiIndex& index) {
  std::map<std::string, const GpsPoint*> first;
  for (const auto& p : points) {
    auto [it, inserted] = first.emplace(p.user_id, &p);
    if (!inserted && p.timestamp < it->second->timestamp) it->second = &p;
  }
  std::vector<UserAssignment> out;
  out.reserve(first.size());
  for (const auto& [user, p] : first) out.push_back({user, index.nearest(p->lat, p->lon), p->timestamp});
  return out;
}

inline std::vector<std::uint32_t> populations_from(std::span<const UserAssignment> assignments, std::size_t n_pois) {
  std::vector<std::uint32_t> pop(n_pois, 0);
  for (const auto& a : assignments) ++pop.at(a.poi);
  return pop;
}

// Per-POI population of one interval.
inline std::vector<std::uint32_t> assign_to_pois(std::span<const GpsPoint> points, std::span<const Poi> pois) {
  if (pois.empty()) throw std::invalid_argument("assign_to_pois: empty POI set");
  PoiIndex index(pois);
  return populations_from(assign_users(points, index), pois.size());
}

struct EdgeFilter {
  double max_dist_km = 30.0;
  double max_speed_kmh = 150.0;
};

// Directed transitions between consecutive intervals. Both assignment lists
// are sorted by user_id. A user contributes at most one transition.
inline std::vector<Edge> build_edges(std::span<const UserAssignment> previous, std::span<const UserAssignment> current,
                                     std::span<const Poi> pois, const EdgeFilter& filter) {
  std::map<EdgeKey, std::uint32_t> counts;
  std::size_t i = 0, j = 0;
  while (i < previous.size() && j < current.size()) {
    if (previous[i].user_id < current[j].user_id) {
      ++i;
    } else if (current[j].user_id < previous[i].user_id) {
      ++j;
    } else {
      const auto& a = previous[i++];
      const auto& b = current[j++];
      if (a.poi == b.poi) continue;
      const double km = poi_distance_km(pois[a.poi], pois[b.poi]);
      if (km > filter.max_dist_km) continue;
      const double hours = static_cast<double>(b.timestamp - a.timestamp) / 3600.0;
      if (hours <= 0.0 || km / hours > filter.max_speed_kmh) continue;
      ++counts[{a.poi, b.poi}];
    }
  }
  std::vector<Edge> edges;
  edges.reserve(counts.size());
  for (const auto& [key, w] : counts) edges.push_back({key.first, key.second, w});
  return edges;
}

struct IntervalGrid {
  std::int64_t start_time = 0;
  std::int64_t interval_s = 900;
  std::int64_t n_intervals = 0;  // <= 0 infers from the last timestamp
};

// Cleaned traces to one snapshot per interval, emitted in interval order.
// Interval 0 has no predecessor and therefore no edges.
inline std::vector<Snapshot> build_snapshots(std::span<const GpsPoint> points, std::span<const Poi> pois,
                                             const IntervalGrid& grid, const EdgeFilter& filter) {
  if (grid.interval_s <= 0) throw std::invalid_argument("interval length must be positive");
  PoiIndex index(pois);
  std::int64_t n = grid.n_intervals;
  if (n <= 0) {
    std::int64_t last = -1;
    for (const auto& p : points)
      if (p.timestamp >= grid.start_time) last = std::max(last, (p.timestamp - grid.start_time) / grid.interval_s);
    n = last + 1;
  }
  std::vector<std::vector<GpsPoint>> buckets(static_cast<std::size_t>(std::max<std::int64_t>(n, 0)));
  for (const auto& p : points) {
    if (p.timestamp < grid.start_time) continue;
    const auto k = (p.timestamp - grid.start_time) / grid.interval_s;
    if (k < n) buckets[static_cast<std::size_t>(k)].push_back(p);
  }
  std::vector<Snapshot> snapshots;
  snapshots.reserve(buckets.size());
  std::vector<UserAssignment> previous;
  for (std::size_t k = 0; k < buckets.size(); ++k) {
    auto current = assign_users(buckets[k], index);
    Snapshot s;
    s.t = static_cast<std::int64_t>(k);
    s.populations = populations_from(current, pois.size());
    if (k > 0) s.edges = build_edges(previous, current, pois, filter);
    snapshots.push_back(std::move(s));
    previous = std::move(current);
  }
  return snapshots;
}

}  // namespace urbanpulse::mobility
