#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "urbanpulse/model/decoder.hpp"
#include "urbanpulse/model/encoder.hpp"

namespace urbanpulse::model {

// Predicted flows (normalized units) in T x B x M layout; padded slots hold 0.
struct FlowPrediction {
  std::size_t steps = 0, batch = 0, max_edges = 0;
  std::vector<double> flows;

  double at(std::size_t t, std::size_t b, std::size_t m) const { return flows[(t * batch + b) * max_edges + m]; }
  double& at(std::size_t t, std::size_t b, std::size_t m) { return flows[(t * batch + b) * max_edges + m]; }
};

struct FlowModel {
  EncoderConfig encoder_config;
  DecoderConfig decoder_config;
  EncoderParams encoder;
  DecoderParams decoder;

  static FlowModel create(const EncoderConfig& enc, const DecoderConfig& dec, std::uint64_t seed) {
    enc.validate();
    dec.validate();
    if (dec.model_dim != enc.edge_dim) throw std::invalid_argument("decoder model_dim must equal encoder edge_dim");
    num::Rng rng(seed, 0xC0DE);
    FlowModel m;
    m.encoder_config = enc;
    m.decoder_config = dec;
    m.encoder = init_encoder(enc, rng);
    m.decoder = init_decoder(dec, rng);
    return m;
  }

  // Visits every parameter with its checkpoint key, in a fixed order.
  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    fn("encoder.embedding", encoder.embedding);
    for (std::size_t l = 0; l < encoder.conv.size(); ++l) {
      const std::string k = "encoder.conv" + std::to_string(l) + ".";
      auto& c = encoder.conv[l];
      fn(k + "kernel", c.kernel);
      fn(k + "bias", c.bias);
      fn(k + "ln_gamma", c.ln_gamma);
      fn(k + "ln_beta", c.ln_beta);
    }
    for (std::size_t l = 0; l < encoder.gcn.size(); ++l) {
      const std::string k = "encoder.gcn" + std::to_string(l) + ".";
      fn(k + "weight", encoder.gcn[l].weight);
      if (encoder.gcn[l].residual.defined()) fn(k + "residual", encoder.gcn[l].residual);
    }
    fn("encoder.edge.weight", encoder.edge_weight);
    fn("encoder.edge.bias", encoder.edge_bias);
    for (std::size_t l = 0; l < decoder.layers.size(); ++l) {
      const std::string k = "decoder.layer" + std::to_string(l) + ".";
      auto& L = decoder.layers[l];
      fn(k + "wq", L.wq);
      fn(k + "bq", L.bq);
      fn(k + "wk", L.wk);
      fn(k + "bk", L.bk);
      fn(k + "wv", L.wv);
      fn(k + "bv", L.bv);
      fn(k + "wo", L.wo);
      fn(k + "bo", L.bo);
      fn(k + "ln1_gamma", L.ln1_gamma);
      fn(k + "ln1_beta", L.ln1_beta);
      fn(k + "w1", L.w1);
      fn(k + "b1", L.b1);
      fn(k + "w2", L.w2);
      fn(k + "b2", L.b2);
      fn(k + "ln2_gamma", L.ln2_gamma);
      fn(k + "ln2_beta", L.ln2_beta);
    }
    fn("head.weight", decoder.head_weight);
    fn("head.bias", decoder.head_bias);
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    const_cast<FlowModel*>(this)->for_each_parameter([&](const std::string& k, Tensor& t) { out.emplace_back(k, t); });
    return out;
  }

  FlowModel clone() const {
    FlowModel m = *this;
    m.for_each_parameter([](const std::string&, Tensor& t) { t = t.clone(); });
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [k, t] : named_parameters()) n += t.numel();
    return n;
  }
};

struct ForwardResult {
  Tensor loss;  // undefined when the batch has no valid target slot
  std::size_t target_slots = 0;
  FlowPrediction prediction;
  std::vector<EncodedWindow> encoded;  // kept only on request
};

// Runs encoder, decoder and head on every window of the batch. The decoder sees
// only valid tokens; masked keys would receive zero attention weight anyway.
inline ForwardResult forward(const FlowModel& model, const mobility::WindowedBatch& batch, const ForwardOptions& opt,
                             bool keep_encoded = false) {
  ForwardResult r;
  r.prediction.steps = batch.steps;
  r.prediction.batch = batch.batch;
  r.prediction.max_edges = batch.max_edges;
  r.prediction.flows.assign(batch.steps * batch.batch * batch.max_edges, 0.0);
  std::vector<Tensor> preds;
  std::vector<double> targets;
  std::vector<std::uint8_t> target_mask;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    EncodedWindow enc = encode_window(batch, b, model.encoder, model.encoder_config, opt);
    if (enc.valid() > 0) {
      Tensor z = decode(enc.tokens, std::vector<std::uint8_t>(enc.valid(), 1), model.decoder, model.decoder_config, opt, b);
      Tensor flow = predict_flows(z, model.decoder.head_weight, model.decoder.head_bias);
      for (std::size_t k = 0; k < enc.valid(); ++k) {
        const std::size_t t = enc.token_step[k], m = enc.token_edge[k];
        r.prediction.at(t, b, m) = flow[k];
        const bool is_target = batch.is_target_step(t);
        target_mask.push_back(is_target);
        targets.push_back(batch.targets[batch.slot(b, t, m)]);
        r.target_slots += is_target;
      }
      preds.push_back(flow);
    }
    if (keep_encoded) r.encoded.push_back(std::move(enc));
  }
  if (r.target_slots > 0) {
    Tensor all = preds.size() == 1 ? preds.front() : num::concat(preds, 0);
    r.loss = masked_mse_loss(all, targets, target_mask);
  }
  return r;
}

}  // namespace urbanpulse::model
