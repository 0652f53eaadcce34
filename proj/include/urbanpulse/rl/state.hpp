#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "urbanpulse/model/encoder.hpp"

// RL state: temporal-difference statistics of pooled edge embeddings, final-step
// edge statistics and embedded node-feature statistics, standardized.
namespace urbanpulse::rl {

inline constexpr std::size_t kEdgeDim = 256;
inline constexpr std::size_t kNodeFeatureDim = 12;
inline constexpr std::size_t kTemporalBlock = 4 * kEdgeDim;      // 1024
inline constexpr std::size_t kSnapshotBlock = 2 * kEdgeDim;      // 512
inline constexpr std::size_t kNodeBlock = 2 * kNodeFeatureDim;   // 24
inline constexpr std::size_t kStateDim = kTemporalBlock + kSnapshotBlock + kNodeBlock;

// Edge embeddings of one window: rows of width kEdgeDim, grouped by step.
struct StepEmbeddings {
  std::vector<std::vector<double>> steps;  // steps[t] holds n_t * kEdgeDim values
};

namespace state_detail {

// Appends per-column mean then population std of `rows` (count x width).
inline void mean_std(const std::vector<double>& rows, std::size_t width, std::vector<double>& out) {
  const std::size_t count = rows.size() / width;
  std::vector<double> mean(width, 0.0), var(width, 0.0);
  if (count > 0) {
    for (std::size_t r = 0; r < count; ++r)
      for (std::size_t c = 0; c < width; ++c) mean[c] += rows[r * width + c];
    for (auto& m : mean) m /= static_cast<double>(count);
    for (std::size_t r = 0; r < count; ++r)
      for (std::size_t c = 0; c < width; ++c) {
        const double d = rows[r * width + c] - mean[c];
        var[c] += d * d;
      }
    for (auto& v : var) v = std::sqrt(v / static_cast<double>(count));
  }
  out.insert(out.end(), mean.begin(), mean.end());
  out.insert(out.end(), var.begin(), var.end());
}

}  // namespace state_detail

// Unstandardized 1,560-vector. A step without edges pools to the zero vector.
inline std::vector<double> raw_state(const StepEmbeddings& edges, const std::vector<double>& node_features) {
  const std::size_t T = edges.steps.size();
  if (T < 2) throw std::invalid_argument("build_state: window needs at least 2 steps");
  if (node_features.size() % kNodeFeatureDim != 0) throw std::invalid_argument("build_state: node features must be 12 wide");

  std::vector<std::vector<double>> pooled(T, std::vector<double>(kEdgeDim, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    const auto& rows = edges.steps[t];
    if (rows.size() % kEdgeDim != 0) throw std::invalid_argument("build_state: edge embeddings must be 256 wide");
    const std::size_t n = rows.size() / kEdgeDim;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < kEdgeDim; ++c) pooled[t][c] += rows[r * kEdgeDim + c];
    if (n > 0)
      for (auto& v : pooled[t]) v /= static_cast<double>(n);
  }

  std::vector<double> diffs;
  diffs.reserve((T - 1) * kEdgeDim);
  for (std::size_t t = 0; t + 1 < T; ++t)
    for (std::size_t c = 0; c < kEdgeDim; ++c) diffs.push_back(pooled[t + 1][c] - pooled[t][c]);

  std::vector<double> out;
  out.reserve(kStateDim);
  state_detail::mean_std(diffs, kEdgeDim, out);
  std::vector<double> mx(kEdgeDim, -std::numeric_limits<double>::infinity());
  std::vector<double> mn(kEdgeDim, std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r + 1 < T; ++r)
    for (std::size_t c = 0; c < kEdgeDim; ++c) {
      mx[c] = std::max(mx[c], diffs[r * kEdgeDim + c]);
      mn[c] = std::min(mn[c], diffs[r * kEdgeDim + c]);
    }
  out.insert(out.end(), mx.begin(), mx.end());
  out.insert(out.end(), mn.begin(), mn.end());

  state_detail::mean_std(edges.steps[T - 1], kEdgeDim, out);
  state_detail::mean_std(node_features, kNodeFeatureDim, out);
  return out;
}

// Splits an encoded window into per-step edge rows and (node, step) feature rows.
inline std::vector<double> raw_state(const model::EncodedWindow& enc) {
  if (enc.valid() > 0 && enc.tokens.dim(1) != kEdgeDim) throw std::invalid_argument("build_state: D_g must be 256");
  if (enc.z0.dim(1) != kNodeFeatureDim) throw std::invalid_argument("build_state: node feature dim must be 12");
  StepEmbeddings e;
  e.steps.resize(enc.steps);
  for (std::size_t k = 0; k < enc.valid(); ++k) {
    const auto row = enc.tokens.values().subspan(k * kEdgeDim, kEdgeDim);
    e.steps[enc.token_step[k]].insert(e.steps[enc.token_step[k]].end(), row.begin(), row.end());
  }
  const std::size_t n = enc.z0.dim(0), d = enc.z0.dim(1), T = enc.z0.dim(2);
  std::vector<double> nodes(n * T * d);
  const auto z = enc.z0.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t t = 0; t < T; ++t) nodes[(i * T + t) * d + c] = z[(i * d + c) * T + t];
  return raw_state(e, nodes);
}

// Welford running mean/variance; updates only while not frozen.
class RunningStandardizer {
 public:
  explicit RunningStandardizer(std::size_t dim = kStateDim, double clip = 10.0)
      : mean_(dim, 0.0), m2_(dim, 0.0), clip_(clip) {}

  std::size_t dim() const { return mean_.size(); }
  std::size_t count() const { return count_; }
  bool frozen() const { return frozen_; }
  void freeze(bool on = true) { frozen_ = on; }
  const std::vector<double>& mean() const { return mean_; }

  double variance(std::size_t i) const { return count_ > 0 ? m2_[i] / static_cast<double>(count_) : 1.0; }

  void update(const std::vector<double>& x) {
    if (x.size() != dim()) throw std::invalid_argument("standardizer: dimension mismatch");
    if (frozen_) return;
    ++count_;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean_[i];
      mean_[i] += d / static_cast<double>(count_);
      m2_[i] += d * (x[i] - mean_[i]);
    }
  }

  // (x - mean) / sqrt(var + 1e-8), clipped to +-clip.
  std::vector<double> apply(const std::vector<double>& x) const {
    if (x.size() != dim()) throw std::invalid_argument("standardizer: dimension mismatch");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      out[i] = std::clamp((x[i] - mean_[i]) / std::sqrt(variance(i) + 1e-8), -clip_, clip_);
    return out;
  }

  // Updates (unless frozen) and standardizes.
  std::vector<double> operator()(const std::vector<double>& x) {
    update(x);
    return apply(x);
  }

 private:
  std::vector<double> mean_, m2_;
  std::size_t count_ = 0;
  bool frozen_ = false;
  double clip_;
};

}  // namespace urbanpulse::rl
