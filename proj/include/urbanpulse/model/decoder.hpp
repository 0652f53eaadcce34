#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "urbanpulse/model/encoder.hpp"
#include "urbanpulse/numerics.hpp"

// Masked transformer over edge tokens and the Softplus flow head.
namespace urbanpulse::model {

struct DecoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t model_dim = 256;
  std::size_t ffn_dim = 512;
  double dropout = 0.1;
  double ln_eps = 1e-5;

  void validate() const {
    if (heads == 0 || model_dim == 0 || ffn_dim == 0) throw std::invalid_argument("decoder: zero-sized dimension");
    if (model_dim % heads != 0) throw std::invalid_argument("decoder: model_dim must be divisible by heads");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("decoder: dropout must be in [0,1)");
  }

  bool operator==(const DecoderConfig&) const = default;
};

struct DecoderLayer {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gamma, ln1_beta;
  Tensor w1, b1, w2, b2;
  Tensor ln2_gamma, ln2_beta;
};

struct DecoderParams {
  std::vector<DecoderLayer> layers;
  Tensor head_weight;  // W_out [model_dim x 1]
  Tensor head_bias;    // b_out [1]
};

inline DecoderParams init_decoder(const DecoderConfig& cfg, num::Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.model_dim, f = cfg.ffn_dim;
  DecoderParams p;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    DecoderLayer L;
    L.wq = xavier(rng, {d, d}, d, d);
    L.wk = xavier(rng, {d, d}, d, d);
    L.wv = xavier(rng, {d, d}, d, d);
    L.wo = xavier(rng, {d, d}, d, d);
    L.bq = Tensor::zeros({d}, true);
    L.bk = Tensor::zeros({d}, true);
    L.bv = Tensor::zeros({d}, true);
    L.bo = Tensor::zeros({d}, true);
    L.ln1_gamma = Tensor::full({d}, 1.0, true);
    L.ln1_beta = Tensor::zeros({d}, true);
    L.w1 = xavier(rng, {d, f}, d, f);
    L.b1 = Tensor::zeros({f}, true);
    L.w2 = xavier(rng, {f, d}, f, d);
    L.b2 = Tensor::zeros({d}, true);
    L.ln2_gamma = Tensor::full({d}, 1.0, true);
    L.ln2_beta = Tensor::zeros({d}, true);
    p.layers.push_back(std::move(L));
  }
  p.head_weight = xavier(rng, {d, 1}, d, 1);
  p.head_bias = Tensor::zeros({1}, true);
  return p;
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return num::add(num::matmul(x, w), b); }

// Multi-head self-attention over `x` [S x D]; `key_mask` marks valid keys.
inline Tensor self_attention(const Tensor& x, const DecoderLayer& L, std::size_t heads,
                             const std::vector<std::uint8_t>& key_mask) {
  const std::size_t d = x.dim(1), dh = d / heads;
  Tensor q = linear(x, L.wq, L.bq);
  Tensor k = linear(x, L.wk, L.bk);
  Tensor v = linear(x, L.wv, L.bv);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = num::slice(q, 1, h * dh, (h + 1) * dh);
    Tensor kh = num::slice(k, 1, h * dh, (h + 1) * dh);
    Tensor vh = num::slice(v, 1, h * dh, (h + 1) * dh);
    Tensor w = num::attention_softmax(num::scale(num::matmul_nt(qh, kh), inv_scale), key_mask);
    outs.push_back(num::matmul(w, vh));
  }
  Tensor o = heads == 1 ? outs.front() : num::concat(outs, 1);
  return linear(o, L.wo, L.bo);
}

// L_d post-norm layers: x = LN(x + Drop(MHA(x))); x = LN(x + Drop(FFN(x))).
// tokens: [S x model_dim], mask: S entries (1 = valid key).
inline Tensor decode(const Tensor& tokens, const std::vector<std::uint8_t>& mask, const DecoderParams& p,
                     const DecoderConfig& cfg, const ForwardOptions& opt, std::uint64_t stream = 0) {
  if (tokens.rank() != 2 || tokens.dim(1) != cfg.model_dim)
    throw num::ShapeError("decode: token dimension " + num::shape_str(tokens.shape()) + " does not match model_dim " +
                          std::to_string(cfg.model_dim));
  if (mask.size() != tokens.dim(0)) throw num::ShapeError("decode: mask length does not match token count");
  Tensor x = tokens;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    const std::uint64_t base = stream * 1024 + 2 * l;
    Tensor attn = num::dropout(self_attention(x, L, cfg.heads, mask), cfg.dropout, opt.training,
                               num::mix_seed(opt.seed, 0x1000 + base));
    x = num::layer_norm(num::add(x, attn), L.ln1_gamma, L.ln1_beta, cfg.ln_eps);
    Tensor ffn = linear(num::relu(linear(x, L.w1, L.b1)), L.w2, L.b2);
    ffn = num::dropout(ffn, cfg.dropout, opt.training, num::mix_seed(opt.seed, 0x1000 + base + 1));
    x = num::layer_norm(num::add(x, ffn), L.ln2_gamma, L.ln2_beta, cfg.ln_eps);
  }
  return x;
}

// Softplus(W_out z + b_out) per row of z: [S x D] -> [S x 1].
inline Tensor predict_flows(const Tensor& z, const Tensor& head_weight, const Tensor& head_bias) {
  if (head_weight.rank() != 2 || head_weight.dim(1) != 1 || head_bias.numel() != 1)
    throw num::ShapeError("predict_flows: head must map D inputs to one output");
  return num::softplus(num::add(num::matmul(z, head_weight), head_bias));
}

// Mean squared error over the rows of `predictions` listed in `rows`.
// Slots outside `rows` (padding, non-target steps) contribute nothing.
inline Tensor masked_mse_loss(const Tensor& predictions, const std::vector<double>& targets,
                              const std::vector<std::uint8_t>& mask) {
  if (predictions.numel() != targets.size() || mask.size() != targets.size())
    throw num::ShapeError("masked_mse_loss: prediction, target and mask sizes differ");
  std::vector<std::size_t> rows;
  std::vector<double> t;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      rows.push_back(i);
      t.push_back(targets[i]);
    }
  if (rows.empty()) throw std::invalid_argument("masked_mse_loss: no valid slots");
  Tensor sel = num::gather_rows(num::reshape(predictions, {predictions.numel(), 1}), rows);
  return num::mean(num::square(num::sub(sel, Tensor::from({rows.size(), 1}, std::move(t)))));
}

}  // namespace urbanpulse::model
