#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "urbanpulse/rl/env.hpp"
#include "urbanpulse/rl/policy.hpp"
#include "urbanpulse/transfer/optimizer.hpp"

namespace urbanpulse::rl {

struct PpoConfig {
  double clip = 0.2;
  double c1 = 0.5;
  double c2 = 0.01;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double learning_rate = 3e-4;
  std::size_t episode_length = 8;
  std::size_t epochs = 4;
  std::size_t episodes_per_update = 16;
  std::size_t hidden = 64;
  double init_std = 0.05;
  double max_grad_norm = 0.5;
  bool normalize_advantages = true;
  std::size_t blocks = 32;
  std::size_t stride = 3;

  void validate() const {
    if (!(clip > 0.0 && clip < 1.0)) throw std::invalid_argument("ppo: clip must be in (0,1)");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("ppo: gamma must be in (0,1]");
    if (gae_lambda < 0.0 || gae_lambda > 1.0) throw std::invalid_argument("ppo: gae_lambda must be in [0,1]");
    if (!(learning_rate > 0.0) || episode_length == 0 || epochs == 0 || episodes_per_update == 0 || hidden == 0 ||
        stride == 0)
      throw std::invalid_argument("ppo: sizes and step size must be positive");
  }
};

struct Advantages {
  std::vector<double> advantages, returns;
};

// GAE over one episode with a zero bootstrap after the last step.
inline Advantages gae(const std::vector<double>& rewards, const std::vector<double>& values, double gamma, double lambda) {
  if (rewards.size() != values.size()) throw std::invalid_argument("gae: size mismatch");
  Advantages a;
  a.advantages.assign(rewards.size(), 0.0);
  a.returns.assign(rewards.size(), 0.0);
  double next_adv = 0.0, next_value = 0.0;
  for (std::size_t k = rewards.size(); k-- > 0;) {
    const double delta = rewards[k] + gamma * next_value - values[k];
    next_adv = delta + gamma * lambda * next_adv;
    a.advantages[k] = next_adv;
    a.returns[k] = next_adv + values[k];
    next_value = values[k];
  }
  return a;
}

// Flattened rollout data for one update.
struct PpoBatch {
  Tensor states;      // [B x D]
  Tensor actions;     // [B x A], raw samples
  Tensor old_log_prob;  // [B x 1]
  Tensor advantages;  // [B x 1]
  Tensor returns;     // [B x 1]
};

struct PpoTerms {
  Tensor loss;
  double surrogate = 0.0, value_loss = 0.0, entropy = 0.0;
};

// loss = -(mean min(rho A, clip(rho) A) - c1 mean (V - R)^2 + c2 H).
inline PpoTerms ppo_loss(const GaussianPolicy& policy, const ValueFunction& value, const PpoBatch& b, const PpoConfig& cfg) {
  Tensor ratio = num::exp(num::sub(policy.log_prob(b.states, b.actions), b.old_log_prob));
  for (double r : ratio.values())
    if (!std::isfinite(r)) throw std::runtime_error("ppo: non-finite probability ratio");
  Tensor surr = num::mean(num::minimum(num::mul(ratio, b.advantages),
                                       num::mul(num::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), b.advantages)));
  Tensor vloss = num::mean(num::square(num::sub(value(b.states), b.returns)));
  Tensor ent = policy.entropy();
  PpoTerms t;
  t.loss = num::add(num::sub(num::scale(vloss, cfg.c1), surr), num::scale(ent, -cfg.c2));
  t.surrogate = surr.item();
  t.value_loss = vloss.item();
  t.entropy = ent.item();
  return t;
}

class PpoAgent {
 public:
  PpoAgent(std::size_t state_dim, std::size_t action_dim, const PpoConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), standardizer_(state_dim), rng_(seed, 0xA11CE) {
    cfg_.validate();
    num::Rng init(seed, 0x1417);
    policy_ = GaussianPolicy::create(state_dim, cfg.hidden, action_dim, cfg.init_std, init);
    value_ = ValueFunction::create(state_dim, cfg.hidden, init);
    transfer::AdamConfig ac;
    ac.learning_rate = cfg.learning_rate;
    ac.weight_decay = 0.0;
    ac.grad_clip_norm = cfg.max_grad_norm;
    std::vector<Tensor> params;
    for_each_parameter([&](const std::string&, Tensor& t) { params.push_back(t); });
    opt_ = std::make_unique<transfer::Adam>(params, ac);
  }

  const PpoConfig& config() const { return cfg_; }
  GaussianPolicy& policy() { return policy_; }
  ValueFunction& value() { return value_; }
  RunningStandardizer& standardizer() { return standardizer_; }

  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    policy_.for_each_parameter(fn);
    value_.for_each_parameter(fn);
  }

  // Samples a ~ N(mu, sigma^2) when `stochastic`, otherwise returns mu.
  Decision act(const std::vector<double>& state, bool stochastic) {
    num::NoGradGuard no_grad;
    const Tensor s = Tensor::from({1, state.size()}, state);
    const Tensor mu = policy_.mean(s);
    Decision d;
    d.action.assign(mu.values().begin(), mu.values().end());
    if (stochastic) {
      const auto ls = policy_.log_std.values();
      for (std::size_t i = 0; i < d.action.size(); ++i) d.action[i] += std::exp(ls[i]) * rng_.normal();
    }
    d.log_prob = policy_.log_prob(s, Tensor::from({1, d.action.size()}, d.action)).item();
    d.value = value_(s).item();
    return d;
  }

  Actor actor(bool stochastic) {
    return [this, stochastic](const std::vector<double>& s) { return act(s, stochastic); };
  }

  // Clipped-surrogate update over all transitions of `episodes`.
  PpoTerms update(const std::vector<Trajectory>& episodes) {
    if (episodes.empty()) throw std::invalid_argument("ppo_update: no episodes");
    std::vector<double> states, actions, old_lp, adv, ret;
    for (const auto& ep : episodes) {
      std::vector<double> rewards, values;
      for (const auto& st : ep.steps) {
        rewards.push_back(st.reward);
        values.push_back(st.decision.value);
        states.insert(states.end(), st.state.begin(), st.state.end());
        actions.insert(actions.end(), st.decision.action.begin(), st.decision.action.end());
        old_lp.push_back(st.decision.log_prob);
      }
      const auto a = gae(rewards, values, cfg_.gamma, cfg_.gae_lambda);
      adv.insert(adv.end(), a.advantages.begin(), a.advantages.end());
      ret.insert(ret.end(), a.returns.begin(), a.returns.end());
    }
    const std::size_t B = adv.size();
    if (cfg_.normalize_advantages && B > 1) {
      double mean = 0.0, var = 0.0;
      for (double v : adv) mean += v / static_cast<double>(B);
      for (double v : adv) var += (v - mean) * (v - mean) / static_cast<double>(B);
      const double sd = std::sqrt(var) + 1e-8;
      for (double& v : adv) v = (v - mean) / sd;
    }
    const std::size_t D = states.size() / B, A = actions.size() / B;
    PpoBatch batch{Tensor::from({B, D}, std::move(states)), Tensor::from({B, A}, std::move(actions)),
                   Tensor::from({B, 1}, std::move(old_lp)), Tensor::from({B, 1}, std::move(adv)),
                   Tensor::from({B, 1}, std::move(ret))};
    PpoTerms terms;
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      terms = ppo_loss(policy_, value_, batch, cfg_);
      opt_->zero_grad();
      num::backward(terms.loss);
      opt_->step();
    }
    opt_->zero_grad();
    return terms;
  }

 private:
  PpoConfig cfg_;
  RunningStandardizer standardizer_;
  num::Rng rng_;
  GaussianPolicy policy_;
  ValueFunction value_;
  std::unique_ptr<transfer::Adam> opt_;
};

struct RlTrainResult {
  std::vector<double> raw_rewards;
  std::vector<double> smoothed_rewards;
};

// Episodes start at uniformly drawn windows; PPO updates after every
// `episodes_per_update` episodes. The standardizer is frozen on return.
inline RlTrainResult train_ppo(const HeadEnvironment& env, PpoAgent& agent, std::size_t episodes,
                               const RewardConfig& reward_cfg, std::uint64_t seed, std::size_t smoothing_window = 100) {
  const auto& cfg = agent.config();
  const std::size_t K = cfg.episode_length;
  const std::size_t starts = env.episode_count(K);
  if (starts == 0) throw std::invalid_argument("train_ppo: not enough windows for one episode");
  num::Rng rng(seed, 0xE9150DE);
  RlTrainResult res;
  std::vector<Trajectory> pending;
  agent.standardizer().freeze(false);
  const Actor actor = agent.actor(true);
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    pending.push_back(run_episode(env, rng.index(starts), K, actor, agent.standardizer(), reward_cfg));
    res.raw_rewards.push_back(pending.back().reward);
    if (pending.size() == cfg.episodes_per_update || ep + 1 == episodes) {
      agent.update(pending);
      pending.clear();
    }
  }
  agent.standardizer().freeze(true);
  res.smoothed_rewards = smooth_rewards(res.raw_rewards, smoothing_window);
  return res;
}

// Mean episode reward over every start position of `env`.
inline double mean_episode_reward(const HeadEnvironment& env, std::size_t K, const Actor& actor,
                                  RunningStandardizer& standardizer, const RewardConfig& reward_cfg) {
  const std::size_t starts = env.episode_count(K);
  if (starts == 0) throw std::invalid_argument("mean_episode_reward: not enough windows for one episode");
  double sum = 0.0;
  for (std::size_t s = 0; s < starts; ++s) sum += run_episode(env, s, K, actor, standardizer, reward_cfg).reward;
  return sum / static_cast<double>(starts);
}

}  // namespace urbanpulse::rl
