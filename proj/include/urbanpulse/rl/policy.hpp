#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "urbanpulse/model/encoder.hpp"
#include "urbanpulse/numerics.hpp"

// Diagonal-Gaussian policy and value function, both two-layer tanh perceptrons.
namespace urbanpulse::rl {

using num::Tensor;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct Mlp {
  Tensor w1, b1, w2, b2;

  static Mlp create(std::size_t in, std::size_t hidden, std::size_t out, double out_scale, num::Rng& rng) {
    Mlp m;
    m.w1 = model::xavier(rng, {in, hidden}, in, hidden);
    m.b1 = Tensor::zeros({hidden}, true);
    m.w2 = model::xavier(rng, {hidden, out}, hidden, out);
    for (auto& v : m.w2.mutable_values()) v *= out_scale;
    m.b2 = Tensor::zeros({out}, true);
    return m;
  }

  Tensor operator()(const Tensor& x) const {
    return num::add(num::matmul(num::tanh(num::add(num::matmul(x, w1), b1)), w2), b2);
  }

  std::size_t input_dim() const { return w1.dim(0); }
  std::size_t output_dim() const { return w2.dim(1); }

  template <typename Fn>
  void for_each_parameter(const std::string& prefix, Fn&& fn) {
    fn(prefix + "w1", w1);
    fn(prefix + "b1", b1);
    fn(prefix + "w2", w2);
    fn(prefix + "b2", b2);
  }
};

struct GaussianPolicy {
  Mlp mean;
  Tensor log_std;  // [action_dim]

  // The output layer starts near zero so the initial mean action is ~0.
  static GaussianPolicy create(std::size_t state_dim, std::size_t hidden, std::size_t action_dim, double init_std,
                               num::Rng& rng) {
    if (!(init_std > 0.0)) throw std::invalid_argument("policy: init_std must be positive");
    GaussianPolicy p;
    p.mean = Mlp::create(state_dim, hidden, action_dim, 0.01, rng);
    p.log_std = Tensor::full({action_dim}, std::log(init_std), true);
    return p;
  }

  std::size_t action_dim() const { return log_std.numel(); }

  // Per-row log density of `actions` [B x A] under the policy at `states` [B x D]; [B x 1].
  Tensor log_prob(const Tensor& states, const Tensor& actions) const {
    const std::size_t B = states.dim(0), A = action_dim();
    Tensor mu = mean(states);
    Tensor ls = num::matmul(Tensor::full({B, 1}, 1.0), num::reshape(log_std, {1, A}));
    Tensor z = num::mul(num::sub(actions, mu), num::exp(num::scale(ls, -1.0)));
    Tensor per_dim = num::add_scalar(num::sub(num::scale(num::square(z), -0.5), ls), -0.5 * kLog2Pi);
    return num::matmul(per_dim, Tensor::full({A, 1}, 1.0));
  }

  // Differential entropy of the diagonal Gaussian.
  Tensor entropy() const {
    return num::add_scalar(num::sum(log_std), 0.5 * (1.0 + kLog2Pi) * static_cast<double>(action_dim()));
  }

  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    mean.for_each_parameter("policy.", fn);
    fn("policy.log_std", log_std);
  }
};

struct ValueFunction {
  Mlp net;

  static ValueFunction create(std::size_t state_dim, std::size_t hidden, num::Rng& rng) {
    return {Mlp::create(state_dim, hidden, 1, 1.0, rng)};
  }

  Tensor operator()(const Tensor& states) const { return net(states); }

  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    net.for_each_parameter("value.", fn);
  }
};

}  // namespace urbanpulse::rl
