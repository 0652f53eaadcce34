#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace urbanpulse::rl {

struct RewardConfig {
  double delta = 1.0;
  double lambda = 0.5;

  void validate() const {
    if (!(delta > 0.0) || lambda < 0.0) throw std::invalid_argument("reward: delta must be > 0 and lambda >= 0");
  }
};

// Flow-weighted squared error and absolute error of one step, in counts.
struct StepError {
  double wmse = 0.0;
  double mae = 0.0;
};

inline StepError step_error(const std::vector<double>& predicted, const std::vector<double>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("step_error: size mismatch");
  if (truth.empty()) throw std::invalid_argument("step_error: no evaluated edges");
  const double w_max = *std::max_element(truth.begin(), truth.end());
  StepError e;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double weight = w_max > 0.0 ? 1.0 + truth[i] / w_max : 1.0;
    const double d = predicted[i] - truth[i];
    e.wmse += weight * d * d;
    e.mae += std::fabs(d);
  }
  const double n = static_cast<double>(truth.size());
  e.wmse /= n;
  e.mae /= n;
  return e;
}

// Mean over steps of -delta * (wmse + lambda * mae).
inline double compute_reward(const std::vector<StepError>& steps, const RewardConfig& cfg) {
  if (steps.empty()) throw std::invalid_argument("compute_reward: empty episode");
  double sum = 0.0;
  for (const auto& s : steps) sum += -cfg.delta * (s.wmse + cfg.lambda * s.mae);
  return sum / static_cast<double>(steps.size());
}

// Trailing moving average; the first window-1 entries average the available prefix.
inline std::vector<double> smooth_rewards(const std::vector<double>& raw, std::size_t window) {
  if (window == 0) throw std::invalid_argument("smooth_rewards: window must be >= 1");
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::size_t first = i + 1 >= window ? i + 1 - window : 0;
    double sum = 0.0;
    for (std::size_t k = first; k <= i; ++k) sum += raw[k];
    out[i] = sum / static_cast<double>(i + 1 - first);
  }
  return out;
}

}  // namespace urbanpulse::rl
