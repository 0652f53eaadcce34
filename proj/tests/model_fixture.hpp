#pragma once

// Tiny hand-sized graphs and model shapes for the model, transfer and RL tests.

#include <vector>

#include "urbanpulse/mobility.hpp"
#include "urbanpulse/model/model.hpp"
#include "urbanpulse/numerics.hpp"

namespace urbanpulse::test {

struct TinySeries {
  std::vector<mobility::Poi> pois;
  std::vector<mobility::Snapshot> snapshots;
  std::vector<mobility::WeatherRecord> weather;
  mobility::NormStats stats;
  mobility::PreparedSeries series;
};

// Random directed edges with probability `density` per ordered pair per step.
inline TinySeries tiny_series(std::uint64_t seed, std::size_t n, std::size_t intervals, double density = 0.4,
                              std::size_t n_types = 3) {
  num::Rng rng(seed, 77);
  TinySeries s;
  for (std::size_t i = 0; i < n; ++i)
    s.pois.push_back({static_cast<std::uint32_t>(i), 34 + 0.05 * rng.uniform(), -118 + 0.05 * rng.uniform(),
                      static_cast<std::uint32_t>(rng.index(n_types))});
  for (std::size_t t = 0; t < intervals; ++t) {
    mobility::Snapshot snap;
    snap.t = static_cast<std::int64_t>(t);
    for (std::size_t i = 0; i < n; ++i) snap.populations.push_back(static_cast<std::uint32_t>(rng.index(20)));
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = 0; j < n; ++j)
        if (i != j && rng.uniform() < density) snap.edges.push_back({i, j, 1 + static_cast<std::uint32_t>(rng.index(5))});
    s.snapshots.push_back(std::move(snap));
    s.weather.push_back({static_cast<std::int64_t>(t), 10 + 10 * rng.uniform(), 60 * rng.uniform(), rng.normal(), rng.normal()});
  }
  s.stats = mobility::compute_norm_stats(s.pois, s.snapshots, s.weather);
  s.series = mobility::prepare_series(s.snapshots, s.pois, s.weather, s.stats);
  return s;
}

inline mobility::WindowedBatch tiny_batch(const TinySeries& s, std::size_t steps, std::size_t batch,
                                          mobility::TargetMode mode = mobility::TargetMode::FinalStep) {
  auto windows = mobility::make_windows(s.snapshots, steps, 1);
  windows.resize(batch);
  return mobility::make_batch(s.series, windows, mode);
}

inline model::EncoderConfig tiny_encoder() {
  model::EncoderConfig c;
  c.n_types = 3;
  c.poi_embed_dim = 2;
  c.temporal_channels = {3, 4};
  c.gcn_widths = {5, 6};
  c.edge_dim = 4;
  c.dropout = 0.0;
  return c;
}

inline model::DecoderConfig tiny_decoder() {
  model::DecoderConfig c;
  c.layers = 1;
  c.heads = 2;
  c.model_dim = 4;
  c.ffn_dim = 6;
  c.dropout = 0.0;
  return c;
}

}  // namespace urbanpulse::test
