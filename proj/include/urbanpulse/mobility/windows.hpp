#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "urbanpulse/mobility/normalize.hpp"
#include "urbanpulse/mobility/types.hpp"

namespace urbanpulse::mobility {

enum class TargetMode { FinalStep, AllSteps };

inline TargetMode parse_target_mode(const std::string& s) {
  if (s == "final_step") return TargetMode::FinalStep;
  if (s == "all_steps") return TargetMode::AllSteps;
  throw std::invalid_argument("unknown target_mode '" + s + "' (expected final_step or all_steps)");
}

inline std::string to_string(TargetMode m) { return m == TargetMode::FinalStep ? "final_step" : "all_steps"; }

// T consecutive snapshots. Candidate edges are the sorted union of the window's
// edges; `present`/`flows` are [T x candidates] and flows are 0 where absent.
struct Window {
  std::size_t start = 0;
  std::size_t steps = 0;
  std::vector<EdgeKey> candidates;
  std::vector<std::uint8_t> present;
  std::vector<std::uint32_t> flows;

  std::size_t edge_count() const { return candidates.size(); }
  bool is_present(std::size_t t, std::size_t m) const { return present[t * candidates.size() + m] != 0; }
};

inline std::vector<Window> make_windows(std::span<const Snapshot> snapshots, std::size_t steps, std::size_t stride) {
  if (steps == 0 || stride == 0) throw std::invalid_argument("window length and stride must be positive");
  if (steps > snapshots.size())
    throw std::invalid_argument("window length " + std::to_string(steps) + " exceeds series of " +
                                std::to_string(snapshots.size()) + " snapshots");
  std::vector<Window> windows;
  for (std::size_t start = 0; start + steps <= snapshots.size(); start += stride) {
    Window w;
    w.start = start;
    w.steps = steps;
    std::map<EdgeKey, std::size_t> slot;
    for (std::size_t t = 0; t < steps; ++t)
      for (const auto& e : snapshots[start + t].edges) slot.emplace(EdgeKey{e.src, e.dst}, 0);
    std::size_t m = 0;
    for (auto& [key, s] : slot) {
      s = m++;
      w.candidates.push_back(key);
    }
    w.present.assign(steps * m, 0);
    w.flows.assign(steps * m, 0);
    for (std::size_t t = 0; t < steps; ++t)
      for (const auto& e : snapshots[start + t].edges) {
        const std::size_t s = slot.at({e.src, e.dst});
        w.present[t * m + s] = 1;
        w.flows[t * m + s] = e.weight;
      }
    windows.push_back(std::move(w));
  }
  return windows;
}

// Normalized node features and adjacency for every snapshot of a split.
struct PreparedSeries {
  std::size_t nodes = 0;
  std::vector<std::int64_t> interval;
  std::vector<std::vector<double>> features;   // per snapshot, [N x 7]
  std::vector<std::vector<double>> adjacency;  // per snapshot, [N x N]
  double flow_max = 1.0;
};

inline PreparedSeries prepare_series(std::span<const Snapshot> snapshots, std::span<const Poi> pois,
                                     std::span<const WeatherRecord> weather, const NormStats& stats) {
  PreparedSeries s;
  s.nodes = pois.size();
  s.flow_max = stats.flow_max;
  for (const auto& snap : snapshots) {
    if (snap.t < 0 || static_cast<std::size_t>(snap.t) >= weather.size())
      throw std::out_of_range("no weather record for interval " + std::to_string(snap.t));
    s.interval.push_back(snap.t);
    s.features.push_back(normalize(snap, pois, weather[static_cast<std::size_t>(snap.t)], stats));
    s.adjacency.push_back(normalized_adjacency(snap, pois.size()));
  }
  return s;
}

// B windows padded to the batch-wide maximum candidate count M.
struct WindowedBatch {
  std::size_t batch = 0, nodes = 0, steps = 0, max_edges = 0;
  TargetMode mode = TargetMode::FinalStep;
  std::vector<double> features;                   // [B x N x 7 x T]
  std::vector<double> adjacency;                  // [B x T x N x N]
  std::vector<std::vector<EdgeKey>> candidates;   // per b, size <= M
  std::vector<std::uint8_t> mask;                 // [B x T x M], 1 where the edge is observed at t
  std::vector<double> targets;                    // [B x T x M], flows / flow_max
  std::vector<std::uint32_t> counts;              // [B x T x M], raw flows
  std::vector<std::int64_t> interval;             // [B x T], source interval of each step
  double flow_max = 1.0;

  std::size_t slot(std::size_t b, std::size_t t, std::size_t m) const { return (b * steps + t) * max_edges + m; }
  bool is_target_step(std::size_t t) const { return mode == TargetMode::AllSteps || t + 1 == steps; }
  double feature(std::size_t b, std::size_t n, std::size_t f, std::size_t t) const {
    return features[((b * nodes + n) * kFeatureSlots + f) * steps + t];
  }
  std::size_t valid_count() const {
    std::size_t c = 0;
    for (auto v : mask) c += v;
    return c;
  }
};

inline WindowedBatch make_batch(const PreparedSeries& series, std::span<const Window> windows, TargetMode mode) {
  if (windows.empty()) throw std::invalid_argument("make_batch: no windows");
  WindowedBatch b;
  b.batch = windows.size();
  b.nodes = series.nodes;
  b.steps = windows.front().steps;
  b.mode = mode;
  b.flow_max = series.flow_max;
  for (const auto& w : windows) {
    if (w.steps != b.steps) throw std::invalid_argument("make_batch: windows differ in length");
    b.max_edges = std::max(b.max_edges, w.edge_count());
  }
  const std::size_t n = b.nodes, T = b.steps, M = b.max_edges;
  b.features.assign(b.batch * n * kFeatureSlots * T, 0.0);
  b.adjacency.assign(b.batch * T * n * n, 0.0);
  b.mask.assign(b.batch * T * M, 0);
  b.targets.assign(b.batch * T * M, 0.0);
  b.counts.assign(b.batch * T * M, 0);
  b.interval.assign(b.batch * T, 0);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const auto& w = windows[i];
    b.candidates.push_back(w.candidates);
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t s = w.start + t;
      b.interval[i * T + t] = series.interval.at(s);
      const auto& f = series.features.at(s);
      for (std::size_t node = 0; node < n; ++node)
        for (std::size_t k = 0; k < kFeatureSlots; ++k)
          b.features[((i * n + node) * kFeatureSlots + k) * T + t] = f[node * kFeatureSlots + k];
      std::copy(series.adjacency[s].begin(), series.adjacency[s].end(), b.adjacency.begin() + (i * T + t) * n * n);
      for (std::size_t m = 0; m < w.edge_count(); ++m) {
        const auto c = w.flows[t * w.edge_count() + m];
        b.mask[b.slot(i, t, m)] = w.present[t * w.edge_count() + m];
        b.counts[b.slot(i, t, m)] = c;
        b.targets[b.slot(i, t, m)] = static_cast<double>(c) / series.flow_max;
      }
    }
  }
  return b;
}

}  // namespace urbanpulse::mobility
