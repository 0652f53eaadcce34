#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "urbanpulse/model/model.hpp"
#include "urbanpulse/rl/action.hpp"
#include "urbanpulse/rl/reward.hpp"
#include "urbanpulse/rl/state.hpp"
#include "urbanpulse/transfer/dataset.hpp"

// Episodic environment over a sequence of windows. Actions only touch the output
// head, so each window's encoder/decoder pass runs once and is cached.
namespace urbanpulse::rl {

using num::Tensor;

struct CachedWindow {
  std::vector<double> raw_state;  // unstandardized, kStateDim
  std::vector<double> z;          // final decoder rows at evaluated slots, rows x model_dim
  std::vector<double> truth;      // true counts per evaluated slot
  std::size_t rows = 0;
};

struct Decision {
  std::vector<double> action;  // raw (unclamped) policy output
  double log_prob = 0.0;
  double value = 0.0;
};

using Actor = std::function<Decision(const std::vector<double>& state)>;

struct Transition {
  std::vector<double> state;  // standardized
  Decision decision;
  double reward = 0.0;
};

struct Trajectory {
  std::size_t start = 0;
  std::vector<Transition> steps;
  std::vector<std::vector<double>> predictions;  // predicted counts per step
  double reward = 0.0;
};

class HeadEnvironment {
 public:
  // Evaluated slots are the valid slots at target steps, as in training.
  HeadEnvironment(const model::FlowModel& m, const transfer::WindowSet& set, mobility::TargetMode mode,
                  GroupingMatrix grouping = GroupingMatrix{})
      : grouping_(grouping), flow_max_(set.series.flow_max) {
    if (m.decoder.head_weight.numel() != grouping_.rows())
      throw std::invalid_argument("environment: head width does not match the grouping matrix");
    const auto head = m.decoder.head_weight.values();
    base_weight_.assign(head.begin(), head.end());
    base_bias_ = m.decoder.head_bias.item();
    num::NoGradGuard no_grad;
    const model::ForwardOptions eval{false, 0};
    for (const auto& w : set.windows) {
      const std::vector<mobility::Window> one{w};
      const auto batch = mobility::make_batch(set.series, one, mode);
      auto enc = model::encode_window(batch, 0, m.encoder, m.encoder_config, eval);
      CachedWindow c;
      c.raw_state = raw_state(enc);
      if (enc.valid() > 0) {
        const Tensor z = model::decode(enc.tokens, std::vector<std::uint8_t>(enc.valid(), 1), m.decoder, m.decoder_config, eval, 0);
        const std::size_t d = z.dim(1);
        for (std::size_t k = 0; k < enc.valid(); ++k) {
          if (!batch.is_target_step(enc.token_step[k])) continue;
          const auto row = z.values().subspan(k * d, d);
          c.z.insert(c.z.end(), row.begin(), row.end());
          c.truth.push_back(batch.counts[batch.slot(0, enc.token_step[k], enc.token_edge[k])]);
          ++c.rows;
        }
      }
      windows_.push_back(std::move(c));
    }
  }

  const GroupingMatrix& grouping() const { return grouping_; }
  std::size_t size() const { return windows_.size(); }
  const CachedWindow& window(std::size_t i) const { return windows_.at(i); }
  const std::vector<double>& base_weight() const { return base_weight_; }
  double base_bias() const { return base_bias_; }

  void set_base_head(std::vector<double> weight, double bias) {
    if (weight.size() != base_weight_.size()) throw std::invalid_argument("environment: head size mismatch");
    base_weight_ = std::move(weight);
    base_bias_ = bias;
  }

  // An episode of K steps starting at window s reads states from windows
  // s..s+K-1 and scores predictions on windows s+1..s+K.
  std::size_t episode_count(std::size_t K) const { return windows_.size() > K ? windows_.size() - K : 0; }

  // Predicted counts softplus(z . W + b) * flow_max for every evaluated slot.
  std::vector<double> predict(std::size_t i, const std::vector<double>& weight, double bias) const {
    const auto& c = windows_.at(i);
    const std::size_t d = weight.size();
    std::vector<double> out(c.rows);
    for (std::size_t r = 0; r < c.rows; ++r) {
      double s = bias;
      for (std::size_t k = 0; k < d; ++k) s += c.z[r * d + k] * weight[k];
      out[r] = num::softplus_value(s) * flow_max_;
    }
    return out;
  }

 private:
  GroupingMatrix grouping_;
  double flow_max_;
  std::vector<double> base_weight_;
  double base_bias_ = 0.0;
  std::vector<CachedWindow> windows_;
};

// Head weights start from the environment's base head; actions compound over
// the episode. Only the terminal transition carries the (mean-over-steps) reward.
// Steps whose scored window has no evaluated slot are skipped in the reward.
inline Trajectory run_episode(const HeadEnvironment& env, std::size_t start, std::size_t K, const Actor& actor,
                              RunningStandardizer& standardizer, const RewardConfig& reward_cfg) {
  if (K == 0 || start + K >= env.size()) throw std::invalid_argument("run_episode: episode runs past the window sequence");
  Trajectory traj;
  traj.start = start;
  std::vector<double> weight = env.base_weight();
  double bias = env.base_bias();
  std::vector<StepError> errors;
  for (std::size_t k = 0; k < K; ++k) {
    Transition tr;
    tr.state = standardizer(env.window(start + k).raw_state);
    tr.decision = actor(tr.state);
    if (tr.decision.action.size() != env.grouping().action_dim())
      throw std::invalid_argument("run_episode: action has wrong dimension");
    apply_action(weight, bias, clamp_action(tr.decision.action), env.grouping());
    const auto& next = env.window(start + k + 1);
    auto pred = env.predict(start + k + 1, weight, bias);
    if (next.rows > 0) errors.push_back(step_error(pred, next.truth));
    traj.predictions.push_back(std::move(pred));
    traj.steps.push_back(std::move(tr));
  }
  traj.reward = compute_reward(errors, reward_cfg);
  traj.steps.back().reward = traj.reward;
  return traj;
}

// Zero action at every step: the head stays at its base values.
inline Actor zero_actor(std::size_t action_dim) {
  return [action_dim](const std::vector<double>&) { return Decision{std::vector<double>(action_dim, 0.0), 0.0, 0.0}; };
}

}  // namespace urbanpulse::rl
