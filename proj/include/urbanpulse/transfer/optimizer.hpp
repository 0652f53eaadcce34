#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "urbanpulse/numerics.hpp"

namespace urbanpulse::transfer {

using num::Tensor;

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // decoupled, applied to the parameter directly
  double l2 = 0.0;             // added to the gradient before the moment updates
  double grad_clip_norm = 1.0; // global; <= 0 disables clipping
};

// Euclidean norm over the gradients of all `params` (missing gradients count as 0).
inline double global_grad_norm(const std::vector<Tensor>& params) {
  double s = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) s += g * g;
  return std::sqrt(s);
}

// Adam with decoupled weight decay, optional L2, and global norm clipping.
// Holds handles to the parameters it updates; other tensors are never touched.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.learning_rate > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  const std::vector<Tensor>& params() const { return params_; }
  std::size_t steps() const { return t_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // Returns the pre-clip gradient norm.
  double step() {
    const double norm = global_grad_norm(params_);
    if (!std::isfinite(norm)) throw std::runtime_error("adam: non-finite gradient norm");
    const double clip = cfg_.grad_clip_norm > 0.0 && norm > cfg_.grad_clip_norm ? cfg_.grad_clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      auto w = p.mutable_values();
      const bool has = p.has_grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = (has ? p.grad()[i] * clip : 0.0) + cfg_.l2 * w[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        w[i] -= cfg_.learning_rate * (update + cfg_.weight_decay * w[i]);
      }
    }
    return norm;
  }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace urbanpulse::transfer
