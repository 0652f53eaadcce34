#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "urbanpulse/model/json.hpp"
#include "urbanpulse/rl.hpp"
#include "urbanpulse/synthetic/city.hpp"
#include "urbanpulse/transfer.hpp"

// RunConfig: one JSON document. Unknown keys are errors; missing keys keep defaults.
//
//   { "seed": 7, "out": "runs/desk",
//     "paths":  { "source": "source", "target": "target", "checkpoints": "checkpoints", "reports": "reports" },
//     "source_city": CityConfig, "target_city": CityConfig,
//     "ingest": { "max_speed_kmh": 150, "max_dist_km": 30 },
//     "model":  { "encoder": EncoderConfig, "decoder": DecoderConfig },
//     "train":  { TrainConfig fields, "coldstart_epochs": 5, "coldstart_learning_rate": 1e-4,
//                 "freeze": { "conv_layers": 1, "gcn_layers": 1, "decoder_layers": 1, "embedding": true } },
//     "rl":     { "reward": { "delta", "lambda" }, "ppo": { PpoConfig fields },
//                 "episodes": 2000, "smoothing_window": 100, "head_scale": 1.0 } }
//
// Relative paths resolve against "out". The top-level seed drives model
// initialization, batch order, dropout and PPO; each city keeps its own seed.
namespace urbanpulse::cli {

using json = model::json;
using model::check_keys;
using model::read_opt;

struct Paths {
  std::filesystem::path source = "source", target = "target", checkpoints = "checkpoints", reports = "reports";
};

struct IngestConfig {
  double max_speed_kmh = 150.0;
  double max_dist_km = 30.0;
};

struct RlRunConfig {
  rl::RewardConfig reward;
  rl::PpoConfig ppo;
  std::size_t episodes = 2000;
  std::size_t smoothing_window = 100;
  double head_scale = 1.0;  // multiplies the cold-start head weights before adaptation
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::filesystem::path out = "runs/default";
  Paths paths;
  synthetic::CityConfig source_city, target_city;
  IngestConfig ingest;
  model::EncoderConfig encoder;
  model::DecoderConfig decoder;
  transfer::TrainConfig train;
  std::size_t coldstart_epochs = 5;
  double coldstart_learning_rate = 1e-4;
  transfer::FreezeSpec freeze;
  RlRunConfig rl;

  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : out / p; }
  std::filesystem::path source_dir() const { return resolve(paths.source); }
  std::filesystem::path target_dir() const { return resolve(paths.target); }
  std::filesystem::path checkpoint_dir() const { return resolve(paths.checkpoints); }
  std::filesystem::path report_dir() const { return resolve(paths.reports); }

  transfer::TrainConfig train_config() const {
    auto t = train;
    t.seed = seed;
    return t;
  }

  transfer::TrainConfig coldstart_config() const {
    auto t = train_config();
    t.epochs = coldstart_epochs;
    t.learning_rate = coldstart_learning_rate;
    return t;
  }

  void validate() const {
    source_city.validate();
    target_city.validate();
    encoder.validate();
    decoder.validate();
    train.validate();
    rl.reward.validate();
    rl.ppo.validate();
    if (!(ingest.max_speed_kmh > 0.0) || !(ingest.max_dist_km > 0.0)) throw std::invalid_argument("ingest: thresholds must be positive");
    if (rl.smoothing_window == 0) throw std::invalid_argument("rl: smoothing_window must be >= 1");
    if (!(rl.head_scale > 0.0)) throw std::invalid_argument("rl: head_scale must be positive");
    if (!(coldstart_learning_rate > 0.0)) throw std::invalid_argument("train: coldstart_learning_rate must be positive");
  }
};

namespace config_detail {

inline synthetic::CityConfig city_from_json(const json& j, const std::string& where) {
  check_keys(j, {"seed", "n_pois", "n_agents", "extent_km", "n_intervals", "diurnal_profile", "attraction_exponent", "move_rate",
                 "burst_probability", "origin_lat", "origin_lon", "start_time", "interval_s"},
             where);
  synthetic::CityConfig c;
  read_opt(j, "seed", c.seed);
  read_opt(j, "n_pois", c.n_pois);
  read_opt(j, "n_agents", c.n_agents);
  read_opt(j, "extent_km", c.extent_km);
  read_opt(j, "n_intervals", c.n_intervals);
  read_opt(j, "diurnal_profile", c.diurnal_profile);
  read_opt(j, "attraction_exponent", c.attraction_exponent);
  read_opt(j, "move_rate", c.move_rate);
  read_opt(j, "burst_probability", c.burst_probability);
  read_opt(j, "origin_lat", c.origin_lat);
  read_opt(j, "origin_lon", c.origin_lon);
  read_opt(j, "start_time", c.start_time);
  read_opt(j, "interval_s", c.interval_s);
  return c;
}

inline mobility::TargetMode target_mode_from(const std::string& s) {
  if (s == "final_step") return mobility::TargetMode::FinalStep;
  if (s == "all_steps") return mobility::TargetMode::AllSteps;
  throw std::invalid_argument("train: target_mode must be 'final_step' or 'all_steps'");
}

inline void read_train(const json& j, RunConfig& c) {
  check_keys(j, {"learning_rate", "weight_decay", "l2", "grad_clip_norm", "epochs", "batch_size", "target_mode", "window", "stride",
                 "coldstart_epochs", "coldstart_learning_rate", "freeze"},
             "train");
  auto& t = c.train;
  read_opt(j, "learning_rate", t.learning_rate);
  read_opt(j, "weight_decay", t.weight_decay);
  read_opt(j, "l2", t.l2);
  read_opt(j, "grad_clip_norm", t.grad_clip_norm);
  read_opt(j, "epochs", t.epochs);
  read_opt(j, "batch_size", t.batch_size);
  if (j.contains("target_mode")) t.target_mode = target_mode_from(j.at("target_mode").get<std::string>());
  read_opt(j, "window", t.window);
  read_opt(j, "stride", t.stride);
  read_opt(j, "coldstart_epochs", c.coldstart_epochs);
  read_opt(j, "coldstart_learning_rate", c.coldstart_learning_rate);
  if (j.contains("freeze")) {
    const auto& f = j.at("freeze");
    check_keys(f, {"conv_layers", "gcn_layers", "decoder_layers", "embedding"}, "train.freeze");
    read_opt(f, "conv_layers", c.freeze.conv_layers);
    read_opt(f, "gcn_layers", c.freeze.gcn_layers);
    read_opt(f, "decoder_layers", c.freeze.decoder_layers);
    read_opt(f, "embedding", c.freeze.embedding);
  }
}

inline void read_rl(const json& j, RlRunConfig& r) {
  check_keys(j, {"reward", "ppo", "episodes", "smoothing_window", "head_scale"}, "rl");
  if (j.contains("reward")) {
    check_keys(j.at("reward"), {"delta", "lambda"}, "rl.reward");
    read_opt(j.at("reward"), "delta", r.reward.delta);
    read_opt(j.at("reward"), "lambda", r.reward.lambda);
  }
  if (j.contains("ppo")) {
    const auto& p = j.at("ppo");
    check_keys(p, {"clip", "c1", "c2", "gamma", "gae_lambda", "learning_rate", "episode_length", "epochs", "episodes_per_update",
                   "hidden", "init_std", "max_grad_norm", "normalize_advantages", "blocks", "stride"},
               "rl.ppo");
    auto& q = r.ppo;
    read_opt(p, "clip", q.clip);
    read_opt(p, "c1", q.c1);
    read_opt(p, "c2", q.c2);
    read_opt(p, "gamma", q.gamma);
    read_opt(p, "gae_lambda", q.gae_lambda);
    read_opt(p, "learning_rate", q.learning_rate);
    read_opt(p, "episode_length", q.episode_length);
    read_opt(p, "epochs", q.epochs);
    read_opt(p, "episodes_per_update", q.episodes_per_update);
    read_opt(p, "hidden", q.hidden);
    read_opt(p, "init_std", q.init_std);
    read_opt(p, "max_grad_norm", q.max_grad_norm);
    read_opt(p, "normalize_advantages", q.normalize_advantages);
    read_opt(p, "blocks", q.blocks);
    read_opt(p, "stride", q.stride);
  }
  read_opt(j, "episodes", r.episodes);
  read_opt(j, "smoothing_window", r.smoothing_window);
  read_opt(j, "head_scale", r.head_scale);
}

}  // namespace config_detail

inline RunConfig config_from_json(const json& j) {
  using namespace config_detail;
  check_keys(j, {"seed", "out", "paths", "source_city", "target_city", "ingest", "model", "train", "rl"}, "config");
  RunConfig c;
  read_opt(j, "seed", c.seed);
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    check_keys(p, {"source", "target", "checkpoints", "reports"}, "paths");
    auto path = [&](const char* k, std::filesystem::path& dst) {
      if (p.contains(k)) dst = p.at(k).get<std::string>();
    };
    path("source", c.paths.source);
    path("target", c.paths.target);
    path("checkpoints", c.paths.checkpoints);
    path("reports", c.paths.reports);
  }
  if (j.contains("source_city")) c.source_city = city_from_json(j.at("source_city"), "source_city");
  if (j.contains("target_city")) c.target_city = city_from_json(j.at("target_city"), "target_city");
  if (j.contains("ingest")) {
    check_keys(j.at("ingest"), {"max_speed_kmh", "max_dist_km"}, "ingest");
    read_opt(j.at("ingest"), "max_speed_kmh", c.ingest.max_speed_kmh);
    read_opt(j.at("ingest"), "max_dist_km", c.ingest.max_dist_km);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, {"encoder", "decoder"}, "model");
    if (m.contains("encoder")) c.encoder = model::encoder_config_from_json(m.at("encoder"));
    if (m.contains("decoder")) c.decoder = model::decoder_config_from_json(m.at("decoder"));
  }
  if (j.contains("train")) read_train(j.at("train"), c);
  if (j.contains("rl")) read_rl(j.at("rl"), c.rl);
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

}  // namespace urbanpulse::cli
