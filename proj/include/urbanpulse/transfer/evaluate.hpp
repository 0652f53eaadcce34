#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>

#include "urbanpulse/model/model.hpp"
#include "urbanpulse/transfer/dataset.hpp"

namespace urbanpulse::transfer {

struct OutcomeCounts {
  std::size_t correct = 0, over = 0, under = 0;

  std::size_t total() const { return correct + over + under; }
  bool operator==(const OutcomeCounts&) const = default;
};

enum class Outcome { Correct, Over, Under };

// Rounds a de-normalized prediction to the nearest count (halves away from zero)
// and compares it with the true count.
inline Outcome classify(double predicted_count, std::uint32_t true_count) {
  const double r = std::round(predicted_count);
  const double t = static_cast<double>(true_count);
  return r == t ? Outcome::Correct : (r > t ? Outcome::Over : Outcome::Under);
}

// MSE/MAE are in normalized units (flows divided by the training flow_max).
struct EvalReport {
  double mse = 0.0, mae = 0.0;
  std::size_t slots = 0;
  OutcomeCounts totals;
  std::map<std::int64_t, OutcomeCounts> per_step;  // keyed by absolute interval index

  double accuracy() const { return slots ? static_cast<double>(totals.correct) / static_cast<double>(slots) : 0.0; }
};

// Accumulates one batch of predictions over the target slots of `batch`.
class EvalAccumulator {
 public:
  void add(const mobility::WindowedBatch& batch, const model::FlowPrediction& pred) {
    for (std::size_t b = 0; b < batch.batch; ++b)
      for (std::size_t t = 0; t < batch.steps; ++t) {
        if (!batch.is_target_step(t)) continue;
        for (std::size_t m = 0; m < batch.max_edges; ++m) {
          const auto s = batch.slot(b, t, m);
          if (!batch.mask[s]) continue;
          add_slot(pred.at(t, b, m), batch.targets[s], batch.counts[s], batch.flow_max, batch.interval[b * batch.steps + t]);
        }
      }
  }

  void add_slot(double predicted, double target, std::uint32_t count, double flow_max, std::int64_t interval) {
    const double d = predicted - target;
    sq_ += d * d;
    abs_ += std::fabs(d);
    ++report_.slots;
    auto& step = report_.per_step[interval];
    switch (classify(predicted * flow_max, count)) {
      case Outcome::Correct: ++report_.totals.correct, ++step.correct; break;
      case Outcome::Over: ++report_.totals.over, ++step.over; break;
      case Outcome::Under: ++report_.totals.under, ++step.under; break;
    }
  }

  EvalReport finish() const {
    EvalReport r = report_;
    if (r.slots > 0) {
      r.mse = sq_ / static_cast<double>(r.slots);
      r.mae = abs_ / static_cast<double>(r.slots);
    }
    return r;
  }

 private:
  EvalReport report_;
  double sq_ = 0.0, abs_ = 0.0;
};

// Evaluation-mode forward over every window of `set`.
inline EvalReport evaluate(const model::FlowModel& model, const WindowSet& set, TargetMode mode,
                           std::size_t batch_size = 8) {
  num::NoGradGuard no_grad;
  EvalAccumulator acc;
  for_each_batch(set, identity_order(set.size()), batch_size, mode, [&](const mobility::WindowedBatch& batch) {
    acc.add(batch, model::forward(model, batch, {false, 0}).prediction);
  });
  return acc.finish();
}

// Mean normalized target over the target slots of `set`.
inline double target_mean(const WindowSet& set, TargetMode mode) {
  double sum = 0.0;
  std::size_t n = 0;
  for_each_batch(set, identity_order(set.size()), 16, mode, [&](const mobility::WindowedBatch& batch) {
    for (std::size_t b = 0; b < batch.batch; ++b)
      for (std::size_t t = 0; t < batch.steps; ++t)
        for (std::size_t m = 0; m < batch.max_edges; ++m) {
          const auto s = batch.slot(b, t, m);
          if (batch.is_target_step(t) && batch.mask[s]) {
            sum += batch.targets[s];
            ++n;
          }
        }
  });
  if (n == 0) throw std::invalid_argument("target_mean: no target slots");
  return sum / static_cast<double>(n);
}

// Report for a model that predicts `value` (normalized) on every slot.
inline EvalReport evaluate_constant(const WindowSet& set, TargetMode mode, double value) {
  EvalAccumulator acc;
  for_each_batch(set, identity_order(set.size()), 16, mode, [&](const mobility::WindowedBatch& batch) {
    model::FlowPrediction p{batch.steps, batch.batch, batch.max_edges,
                            std::vector<double>(batch.steps * batch.batch * batch.max_edges, value)};
    acc.add(batch, p);
  });
  return acc.finish();
}

}  // namespace urbanpulse::transfer
