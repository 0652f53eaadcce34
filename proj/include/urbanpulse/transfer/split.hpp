#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

// Contiguous chronological splits of a snapshot series.
namespace urbanpulse::transfer {

enum class SplitScheme { Source, Target };

struct Range {
  std::size_t begin = 0, end = 0;
  std::size_t size() const { return end - begin; }
};

// Source: train/val/test at 70/15/15. Target: coldstart/rl/eval at 2:4:1.
struct Split {
  Range first, second, third;
};

inline Split split_dataset(std::size_t n_snapshots, SplitScheme scheme, std::size_t window) {
  if (n_snapshots < 3 * window)
    throw std::invalid_argument("split_dataset: " + std::to_string(n_snapshots) + " snapshots is shorter than 3 windows of " +
                                std::to_string(window));
  std::size_t a = 0, b = 0;
  if (scheme == SplitScheme::Source) {
    a = n_snapshots * 70 / 100;
    b = n_snapshots * 15 / 100;
  } else {
    a = n_snapshots * 2 / 7;
    b = n_snapshots * 4 / 7;
  }
  Split s;
  s.first = {0, a};
  s.second = {a, a + b};
  s.third = {a + b, n_snapshots};
  return s;
}

// Chronological train/val split of one range (the cold-start part of a target city).
inline std::pair<Range, Range> holdout(Range r, double train_fraction) {
  const auto cut = r.begin + static_cast<std::size_t>(static_cast<double>(r.size()) * train_fraction);
  return {{r.begin, cut}, {cut, r.end}};
}

}  // namespace urbanpulse::transfer
