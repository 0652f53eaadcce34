#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "urbanpulse/transfer/checkpoint.hpp"
#include "urbanpulse/transfer/dataset.hpp"
#include "urbanpulse/transfer/optimizer.hpp"

// Supervised pretraining and selective-freeze cold-start fine-tuning.
namespace urbanpulse::transfer {

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double l2 = 0.0;
  double grad_clip_norm = 1.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  std::uint64_t seed = 7;
  TargetMode target_mode = TargetMode::FinalStep;
  std::size_t window = 12;
  std::size_t stride = 1;
  std::function<void(const EpochRecord&)> on_epoch;  // progress hook, called after every epoch record

  void validate() const {
    if (!(learning_rate > 0.0) || weight_decay < 0.0 || l2 < 0.0 || grad_clip_norm < 0.0)
      throw std::invalid_argument("train: rates must be positive and penalties nonnegative");
    if (batch_size == 0 || window == 0 || stride == 0) throw std::invalid_argument("train: batch_size, window, stride must be positive");
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.learning_rate = learning_rate;
    a.weight_decay = weight_decay;
    a.l2 = l2;
    a.grad_clip_norm = grad_clip_norm;
    return a;
  }
};

struct TrainResult {
  Checkpoint best;
  std::vector<double> step_losses;
  std::vector<EpochRecord> epochs;  // row 0 is the starting model in evaluation mode
};

// Slot-weighted masked MSE over every window of `set`, evaluation mode.
inline double dataset_loss(const model::FlowModel& m, const WindowSet& set, TargetMode mode, std::size_t batch_size) {
  num::NoGradGuard no_grad;
  double sum = 0.0;
  std::size_t slots = 0;
  for_each_batch(set, identity_order(set.size()), batch_size, mode, [&](const mobility::WindowedBatch& batch) {
    auto r = model::forward(m, batch, {false, 0});
    if (r.target_slots == 0) return;
    sum += r.loss.item() * static_cast<double>(r.target_slots);
    slots += r.target_slots;
  });
  if (slots == 0) throw std::invalid_argument("dataset has no target slots");
  return sum / static_cast<double>(slots);
}

// Layers below each threshold are frozen; edge projection and head always train.
struct FreezeSpec {
  std::size_t conv_layers = 1;
  std::size_t gcn_layers = 1;
  std::size_t decoder_layers = 1;
  bool embedding = true;

  void validate(const model::FlowModel& m) const {
    auto check = [](std::size_t want, std::size_t have, const char* what) {
      if (want > have)
        throw std::invalid_argument("freeze spec references " + std::string(what) + " layer " + std::to_string(want - 1) +
                                    " but the model has " + std::to_string(have));
    };
    check(conv_layers, m.encoder.conv.size(), "temporal conv");
    check(gcn_layers, m.encoder.gcn.size(), "gcn");
    check(decoder_layers, m.decoder.layers.size(), "decoder");
  }

  bool frozen(const std::string& key) const {
    auto layer_below = [&](const std::string& prefix, std::size_t limit) {
      if (key.rfind(prefix, 0) != 0) return false;
      return std::stoul(key.substr(prefix.size())) < limit;
    };
    if (key == "encoder.embedding") return embedding;
    return layer_below("encoder.conv", conv_layers) || layer_below("encoder.gcn", gcn_layers) ||
           layer_below("decoder.layer", decoder_layers);
  }
};

// FNV-1a over keys, shapes and raw value bytes of the selected parameters.
template <typename Pred>
std::uint64_t parameter_hash(const model::FlowModel& m, Pred&& include) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
  };
  for (const auto& [key, t] : m.named_parameters()) {
    if (!include(key)) continue;
    mix(key.data(), key.size());
    for (auto d : t.shape()) mix(&d, sizeof d);
    mix(t.values().data(), t.numel() * sizeof(double));
  }
  return h;
}

inline std::uint64_t frozen_hash(const model::FlowModel& m, const FreezeSpec& spec) {
  return parameter_hash(m, [&](const std::string& k) { return spec.frozen(k); });
}

namespace train_detail {

// Runs `cfg.epochs` epochs of Adam over `trainable`, keeping the checkpoint
// with the lowest validation loss (the starting model included).
inline TrainResult fit(Checkpoint start, const std::vector<Tensor>& trainable, const WindowSet& train,
                       const WindowSet& val, const TrainConfig& cfg) {
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw std::invalid_argument("training and validation sets must be nonempty");
  TrainResult res;
  model::FlowModel& m = start.model;
  const auto mode = cfg.target_mode;

  double best_val = dataset_loss(m, val, mode, cfg.batch_size);
  res.epochs.push_back({0, dataset_loss(m, train, mode, cfg.batch_size), best_val});
  if (cfg.on_epoch) cfg.on_epoch(res.epochs.back());
  res.best = clone(start);
  res.best.best_val_loss = best_val;
  res.best.epoch = 0;

  Adam opt(trainable, cfg.adam());
  num::Rng shuffle_rng(cfg.seed, 0x5EED);
  auto order = identity_order(train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_sum = 0.0;
    std::size_t epoch_batches = 0;
    for_each_batch(train, order, cfg.batch_size, mode, [&](const mobility::WindowedBatch& batch) {
      const model::ForwardOptions fo{true, num::mix_seed(cfg.seed, 0x7000 + step)};
      auto r = model::forward(m, batch, fo);
      ++step;
      if (r.target_slots == 0) return;
      const double loss = r.loss.item();
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss " << loss << " at epoch " << epoch << ", step " << step << " ("
            << r.target_slots << " target slots, first window starts at " << batch.interval.front() << ")";
        throw std::runtime_error(msg.str());
      }
      opt.zero_grad();
      num::backward(r.loss);
      opt.step();
      res.step_losses.push_back(loss);
      epoch_sum += loss;
      ++epoch_batches;
    });
    const double val_loss = dataset_loss(m, val, mode, cfg.batch_size);
    res.epochs.push_back({epoch, epoch_batches ? epoch_sum / static_cast<double>(epoch_batches) : 0.0, val_loss});
    if (cfg.on_epoch) cfg.on_epoch(res.epochs.back());
    if (val_loss < best_val) {
      best_val = val_loss;
      res.best = clone(start);
      res.best.best_val_loss = val_loss;
      res.best.epoch = epoch;
    }
  }
  opt.zero_grad();
  res.best.model.for_each_parameter([](const std::string&, Tensor& t) { t.zero_grad(); });
  return res;
}

}  // namespace train_detail

// Stage 1: every parameter trains. `start.stats` must describe `train`.
inline TrainResult pretrain(const Checkpoint& start, const WindowSet& train, const WindowSet& val, const TrainConfig& cfg) {
  Checkpoint c = clone(start);
  std::vector<Tensor> params;
  c.model.for_each_parameter([&](const std::string&, Tensor& t) { params.push_back(t); });
  return train_detail::fit(std::move(c), params, train, val, cfg);
}

// Stage 2: parameters selected by `freeze` stay bit-identical. With zero epochs
// the input checkpoint comes back unchanged.
inline TrainResult coldstart_finetune(const Checkpoint& start, const WindowSet& train, const WindowSet& val,
                                      const FreezeSpec& freeze, const TrainConfig& cfg) {
  freeze.validate(start.model);
  if (cfg.epochs == 0) {
    TrainResult r;
    r.best = clone(start);
    return r;
  }
  Checkpoint c = clone(start);
  std::vector<Tensor> params;
  c.model.for_each_parameter([&](const std::string& k, Tensor& t) {
    if (!freeze.frozen(k)) params.push_back(t);
  });
  return train_detail::fit(std::move(c), params, train, val, cfg);
}

}  // namespace urbanpulse::transfer
