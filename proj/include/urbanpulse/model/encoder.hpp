#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "urbanpulse/mobility/windows.hpp"
#include "urbanpulse/numerics.hpp"

// Temporal graph encoder: type embedding, sinusoidal time encoding, temporal
// convolutions, per-step graph convolutions, and directed edge tokens.
namespace urbanpulse::model {

using num::Tensor;

inline constexpr std::size_t kContinuousFeatures = mobility::kFeatureSlots - 1;

struct EncoderConfig {
  std::size_t n_types = 8;
  std::size_t poi_embed_dim = 6;
  std::vector<std::size_t> temporal_channels{32, 64};
  std::size_t kernel_size = 3;
  std::vector<std::size_t> gcn_widths{128, 256};
  std::size_t edge_dim = 256;
  double dropout = 0.1;
  double ln_eps = 1e-5;

  std::size_t input_dim() const { return poi_embed_dim + kContinuousFeatures; }
  std::size_t node_dim() const { return gcn_widths.back(); }

  void validate() const {
    if (n_types == 0 || poi_embed_dim == 0 || edge_dim == 0) throw std::invalid_argument("encoder: zero-sized dimension");
    if (temporal_channels.empty() || gcn_widths.empty()) throw std::invalid_argument("encoder: empty layer stack");
    if (kernel_size % 2 == 0) throw std::invalid_argument("encoder: kernel_size must be odd");
    for (std::size_t i = 1; i < gcn_widths.size(); ++i)
      if (gcn_widths[i] <= gcn_widths[i - 1]) throw std::invalid_argument("encoder: gcn_widths must strictly increase");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("encoder: dropout must be in [0,1)");
  }

  bool operator==(const EncoderConfig&) const = default;
};

struct TemporalConvLayer {
  Tensor kernel;  // [C_out x C_in x k]
  Tensor bias;    // [C_out]
  Tensor ln_gamma, ln_beta;
};

struct GraphConvLayer {
  Tensor weight;    // W_g [C_in x C_out]
  Tensor residual;  // R [C_in x C_out]; undefined means identity (equal widths)
};

struct EncoderParams {
  Tensor embedding;  // [n_types x poi_embed_dim]
  std::vector<TemporalConvLayer> conv;
  std::vector<GraphConvLayer> gcn;
  Tensor edge_weight;  // [3*node_dim x edge_dim]
  Tensor edge_bias;    // [edge_dim]
};

inline Tensor xavier(num::Rng& rng, num::Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(num::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-a, a);
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline EncoderParams init_encoder(const EncoderConfig& cfg, num::Rng& rng) {
  cfg.validate();
  EncoderParams p;
  {
    std::vector<double> v(cfg.n_types * cfg.poi_embed_dim);
    for (auto& x : v) x = 0.1 * rng.normal();
    p.embedding = Tensor::from({cfg.n_types, cfg.poi_embed_dim}, std::move(v), true);
  }
  std::size_t c_in = cfg.input_dim();
  for (std::size_t c_out : cfg.temporal_channels) {
    const std::size_t k = cfg.kernel_size;
    p.conv.push_back({xavier(rng, {c_out, c_in, k}, c_in * k, c_out * k), Tensor::zeros({c_out}, true),
                      Tensor::full({c_out}, 1.0, true), Tensor::zeros({c_out}, true)});
    c_in = c_out;
  }
  for (std::size_t c_out : cfg.gcn_widths) {
    GraphConvLayer g;
    g.weight = xavier(rng, {c_in, c_out}, c_in, c_out);
    if (c_in != c_out) g.residual = xavier(rng, {c_in, c_out}, c_in, c_out);
    p.gcn.push_back(std::move(g));
    c_in = c_out;
  }
  p.edge_weight = xavier(rng, {3 * c_in, cfg.edge_dim}, 3 * c_in, cfg.edge_dim);
  p.edge_bias = Tensor::zeros({cfg.edge_dim}, true);
  return p;
}

struct ForwardOptions {
  bool training = false;
  std::uint64_t seed = 0;  // dropout stream
};

// Z0 for batch element b: [N x D0 x T], type embedding followed by the six
// normalized continuous features.
inline Tensor embed_features(const mobility::WindowedBatch& batch, std::size_t b, const Tensor& table) {
  const std::size_t n = batch.nodes, T = batch.steps, d = table.dim(1);
  std::vector<std::size_t> ids(n * T);
  std::vector<double> cont(n * kContinuousFeatures * T);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < T; ++t) {
      const double type = batch.feature(b, i, 0, t);
      if (type < 0.0 || type != std::floor(type)) throw std::out_of_range("embed_features: invalid type index");
      ids[i * T + t] = static_cast<std::size_t>(type);
      for (std::size_t f = 0; f < kContinuousFeatures; ++f)
        cont[(i * kContinuousFeatures + f) * T + t] = batch.feature(b, i, f + 1, t);
    }
  Tensor emb = num::embedding(table, ids);                        // [N*T x d]
  emb = num::permute(num::reshape(emb, {n, T, d}), {0, 2, 1});  // [N x d x T]
  return num::concat({emb, Tensor::from({n, kContinuousFeatures, T}, std::move(cont))}, 1);
}

// Sinusoidal table [D x T]: even rows sin(t / 10000^(2i/D)), odd rows cos of the same angle.
inline std::vector<double> positional_encoding(std::size_t dim, std::size_t steps) {
  std::vector<double> pe(dim * steps);
  for (std::size_t c = 0; c < dim; ++c) {
    const double pair = static_cast<double>(c - c % 2);
    const double freq = std::pow(10000.0, -pair / static_cast<double>(dim));
    for (std::size_t t = 0; t < steps; ++t) {
      const double angle = static_cast<double>(t) * freq;
      pe[c * steps + t] = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// Z = Z0 + PE(t), the same table added to every node. z0: [N x D x T].
inline Tensor temporal_encode(const Tensor& z0) {
  const std::size_t n = z0.dim(0), d = z0.dim(1), T = z0.dim(2);
  const auto pe = positional_encoding(d, T);
  std::vector<double> tiled(n * d * T);
  for (std::size_t i = 0; i < n; ++i) std::copy(pe.begin(), pe.end(), tiled.begin() + i * d * T);
  return num::add(z0, Tensor::from({n, d, T}, std::move(tiled)));
}

// Per layer: Dropout(LayerNorm(ReLU(conv(H)))), norm over channels at each
// (node, time). Input [N x C x T]; output [N x T x C_last].
inline Tensor temporal_conv_stack(const Tensor& z, const EncoderParams& p, const EncoderConfig& cfg,
                                  const ForwardOptions& opt, std::uint64_t stream) {
  Tensor h = z;
  Tensor out;
  for (std::size_t l = 0; l < p.conv.size(); ++l) {
    const auto& layer = p.conv[l];
    Tensor y = num::relu(num::conv1d_time(h, layer.kernel, layer.bias));
    y = num::permute(y, {0, 2, 1});
    y = num::layer_norm(y, layer.ln_gamma, layer.ln_beta, cfg.ln_eps);
    out = num::dropout(y, cfg.dropout, opt.training, num::mix_seed(opt.seed, stream * 64 + l));
    if (l + 1 < p.conv.size()) h = num::permute(out, {0, 2, 1});
  }
  return out;
}

// H^(l) = ReLU(A H W_g) + R H at every step. h: [T x N x C], adjacency: [T x N x N].
inline Tensor st_graph_conv(const Tensor& h, const Tensor& adjacency, const EncoderParams& p) {
  if (adjacency.rank() != 3 || adjacency.dim(0) != h.dim(0) || adjacency.dim(1) != h.dim(1) ||
      adjacency.dim(2) != h.dim(1))
    throw num::ShapeError("st_graph_conv: adjacency " + num::shape_str(adjacency.shape()) +
                          " does not match node tensor " + num::shape_str(h.shape()));
  const std::size_t T = h.dim(0), n = h.dim(1);
  Tensor x = h;
  for (const auto& layer : p.gcn) {
    const std::size_t c_in = x.dim(2);
    if (layer.weight.dim(0) != c_in) throw num::ShapeError("st_graph_conv: layer width mismatch");
    const std::size_t c_out = layer.weight.dim(1);
    Tensor flat = num::reshape(x, {T * n, c_in});
    Tensor agg = num::reshape(num::bmm(adjacency, x), {T * n, c_in});
    Tensor conv = num::relu(num::matmul(agg, layer.weight));
    Tensor res = layer.residual.defined() ? num::matmul(flat, layer.residual) : flat;
    x = num::reshape(num::add(conv, res), {T, n, c_out});
  }
  return x;
}

// Encoder output for one window. Tokens are kept compact (valid slots only);
// `positions[k]` is token k's slot t*M + m in the padded T*M layout.
struct EncodedWindow {
  std::size_t steps = 0, max_edges = 0;
  Tensor z0;             // [N x D0 x T]
  Tensor nodes;          // [T x N x node_dim]
  Tensor tokens;         // [valid x edge_dim]; undefined when the window has no valid slot
  std::vector<std::size_t> positions;
  std::vector<std::size_t> token_step;
  std::vector<std::size_t> token_edge;

  std::size_t valid() const { return positions.size(); }

  // Padded E [T*M x edge_dim] with zero rows where the mask is false.
  Tensor padded_tokens() const { return num::scatter_rows(tokens, positions, steps * max_edges); }

  std::vector<std::uint8_t> mask() const {
    std::vector<std::uint8_t> m(steps * max_edges, 0);
    for (auto p : positions) m[p] = 1;
    return m;
  }
};

// u_ij = [h_i | h_j | |h_i - h_j|], projected by the shared edge map. Tokens are
// laid out edge-major inside each step, steps concatenated over t.
inline void edge_tokens(EncodedWindow& enc, const mobility::WindowedBatch& batch, std::size_t b,
                        const EncoderParams& p) {
  const std::size_t T = batch.steps, M = batch.max_edges, n = batch.nodes;
  std::vector<std::size_t> src_rows, dst_rows;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t m = 0; m < M; ++m) {
      if (!batch.mask[batch.slot(b, t, m)]) continue;
      const auto& e = batch.candidates[b].at(m);
      src_rows.push_back(t * n + e.first);
      dst_rows.push_back(t * n + e.second);
      enc.positions.push_back(t * M + m);
      enc.token_step.push_back(t);
      enc.token_edge.push_back(m);
    }
  if (enc.positions.empty()) return;
  Tensor flat = num::reshape(enc.nodes, {T * n, enc.nodes.dim(2)});
  Tensor hi = num::gather_rows(flat, src_rows);
  Tensor hj = num::gather_rows(flat, dst_rows);
  Tensor u = num::concat({hi, hj, num::abs(num::sub(hi, hj))}, 1);
  enc.tokens = num::add(num::matmul(u, p.edge_weight), p.edge_bias);
}

inline Tensor adjacency_tensor(const mobility::WindowedBatch& batch, std::size_t b) {
  const std::size_t T = batch.steps, n = batch.nodes;
  const auto first = batch.adjacency.begin() + static_cast<std::ptrdiff_t>(b * T * n * n);
  return Tensor::from({T, n, n}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(T * n * n)));
}

inline EncodedWindow encode_window(const mobility::WindowedBatch& batch, std::size_t b, const EncoderParams& p,
                                   const EncoderConfig& cfg, const ForwardOptions& opt) {
  EncodedWindow enc;
  enc.steps = batch.steps;
  enc.max_edges = batch.max_edges;
  enc.z0 = embed_features(batch, b, p.embedding);
  Tensor h = temporal_conv_stack(temporal_encode(enc.z0), p, cfg, opt, b);  // [N x T x C]
  enc.nodes = st_graph_conv(num::permute(h, {1, 0, 2}), adjacency_tensor(batch, b), p);
  edge_tokens(enc, batch, b, p);
  return enc;
}

}  // namespace urbanpulse::model
