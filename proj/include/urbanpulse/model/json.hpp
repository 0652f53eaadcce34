#pragma once

#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "urbanpulse/mobility/normalize.hpp"
#include "urbanpulse/model/decoder.hpp"
#include "urbanpulse/model/encoder.hpp"

// JSON forms of the model configs and normalization statistics.
namespace urbanpulse::model {

using json = nlohmann::ordered_json;

// Rejects keys outside `allowed` so typos in config files fail loudly.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw std::invalid_argument(where + ": unknown key '" + k + "'");
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

// Doubles that may be infinite travel as the strings "inf" / "-inf".
inline json double_to_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) throw std::invalid_argument("cannot serialize NaN");
  return v > 0 ? "inf" : "-inf";
}

inline double double_from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw std::invalid_argument("bad number '" + s + "'");
  }
  return j.get<double>();
}

inline json to_json(const EncoderConfig& c) {
  return {{"n_types", c.n_types},         {"poi_embed_dim", c.poi_embed_dim}, {"temporal_channels", c.temporal_channels},
          {"kernel_size", c.kernel_size}, {"gcn_widths", c.gcn_widths},       {"edge_dim", c.edge_dim},
          {"dropout", c.dropout},         {"ln_eps", c.ln_eps}};
}

inline EncoderConfig encoder_config_from_json(const json& j) {
  check_keys(j, {"n_types", "poi_embed_dim", "temporal_channels", "kernel_size", "gcn_widths", "edge_dim", "dropout", "ln_eps"},
             "encoder");
  EncoderConfig c;
  read_opt(j, "n_types", c.n_types);
  read_opt(j, "poi_embed_dim", c.poi_embed_dim);
  read_opt(j, "temporal_channels", c.temporal_channels);
  read_opt(j, "kernel_size", c.kernel_size);
  read_opt(j, "gcn_widths", c.gcn_widths);
  read_opt(j, "edge_dim", c.edge_dim);
  read_opt(j, "dropout", c.dropout);
  read_opt(j, "ln_eps", c.ln_eps);
  c.validate();
  return c;
}

inline json to_json(const DecoderConfig& c) {
  return {{"layers", c.layers},   {"heads", c.heads},     {"model_dim", c.model_dim},
          {"ffn_dim", c.ffn_dim}, {"dropout", c.dropout}, {"ln_eps", c.ln_eps}};
}

inline DecoderConfig decoder_config_from_json(const json& j) {
  check_keys(j, {"layers", "heads", "model_dim", "ffn_dim", "dropout", "ln_eps"}, "decoder");
  DecoderConfig c;
  read_opt(j, "layers", c.layers);
  read_opt(j, "heads", c.heads);
  read_opt(j, "model_dim", c.model_dim);
  read_opt(j, "ffn_dim", c.ffn_dim);
  read_opt(j, "dropout", c.dropout);
  read_opt(j, "ln_eps", c.ln_eps);
  c.validate();
  return c;
}

inline json to_json(const mobility::Range& r) { return json::array({double_to_json(r.min), double_to_json(r.max)}); }

inline mobility::Range range_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("range must be [min, max]");
  return {double_from_json(j[0]), double_from_json(j[1])};
}

inline json to_json(const mobility::NormStats& s) {
  return {{"lat", to_json(s.lat)},
          {"lon", to_json(s.lon)},
          {"population", to_json(s.population)},
          {"temperature", to_json(s.temperature)},
          {"precipitation", to_json(s.precipitation)},
          {"wind", to_json(s.wind)},
          {"flow_max", s.flow_max}};
}

inline mobility::NormStats norm_stats_from_json(const json& j) {
  mobility::NormStats s;
  s.lat = range_from_json(j.at("lat"));
  s.lon = range_from_json(j.at("lon"));
  s.population = range_from_json(j.at("population"));
  s.temperature = range_from_json(j.at("temperature"));
  s.precipitation = range_from_json(j.at("precipitation"));
  s.wind = range_from_json(j.at("wind"));
  s.flow_max = j.at("flow_max").get<double>();
  return s;
}

}  // namespace urbanpulse::model
