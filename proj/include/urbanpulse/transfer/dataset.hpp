#pragma once

#include <functional>
#include <span>
#include <vector>

#include "urbanpulse/mobility/normalize.hpp"
#include "urbanpulse/mobility/windows.hpp"

namespace urbanpulse::transfer {

using mobility::PreparedSeries;
using mobility::TargetMode;
using mobility::Window;

// Normalized series of one split plus the windows cut from it.
struct WindowSet {
  PreparedSeries series;
  std::vector<Window> windows;

  std::size_t size() const { return windows.size(); }
};

inline WindowSet make_window_set(std::span<const mobility::Snapshot> snapshots, std::span<const mobility::Poi> pois,
                                 std::span<const mobility::WeatherRecord> weather, const mobility::NormStats& stats,
                                 std::size_t steps, std::size_t stride) {
  WindowSet s;
  s.series = mobility::prepare_series(snapshots, pois, weather, stats);
  s.windows = mobility::make_windows(snapshots, steps, stride);
  return s;
}

// Calls `fn` on consecutive batches of windows taken in `order`.
inline void for_each_batch(const WindowSet& set, const std::vector<std::size_t>& order, std::size_t batch_size,
                           TargetMode mode, const std::function<void(const mobility::WindowedBatch&)>& fn) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<Window> chunk;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    chunk.clear();
    for (std::size_t k = i; k < std::min(order.size(), i + batch_size); ++k) chunk.push_back(set.windows.at(order[k]));
    fn(mobility::make_batch(set.series, chunk, mode));
  }
}

inline std::vector<std::size_t> identity_order(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace urbanpulse::transfer
