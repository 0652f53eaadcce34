#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "urbanpulse/mobility/io.hpp"
#include "urbanpulse/model/json.hpp"
#include "urbanpulse/model/model.hpp"

// Binary checkpoint, all integers and floats little-endian:
//   "UPCK" | u32 version | u32 meta_len | meta JSON | u32 n_tensors |
//   n_tensors x (u32 key_len | key | u32 ndim | ndim x u32 dim | f64 values)
// Tensors appear in FlowModel::for_each_parameter order.
namespace urbanpulse::transfer {

using num::Tensor;

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  model::FlowModel model;
  mobility::NormStats stats;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t epoch = 0;
};

namespace ckpt_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::string_view take(std::size_t n) {
    if (pos_ + n > data_.size()) throw CheckpointError("checkpoint truncated");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  double f64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return std::bit_cast<double>(v);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  model::json meta;
  meta["encoder"] = model::to_json(c.model.encoder_config);
  meta["decoder"] = model::to_json(c.model.decoder_config);
  meta["norm_stats"] = model::to_json(c.stats);
  meta["best_val_loss"] = model::double_to_json(c.best_val_loss);
  meta["epoch"] = c.epoch;
  const std::string meta_text = meta.dump();

  std::string out = "UPCK";
  ckpt_detail::put_u32(out, kCheckpointVersion);
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out += meta_text;
  const auto params = c.model.named_parameters();
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [key, t] : params) {
    ckpt_detail::put_u32(out, static_cast<std::uint32_t>(key.size()));
    out += key;
    ckpt_detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) ckpt_detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) ckpt_detail::put_f64(out, v);
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view data) {
  ckpt_detail::Reader r(data);
  if (r.take(4) != "UPCK") throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const auto meta_len = r.u32();
  model::json meta;
  try {
    meta = model::json::parse(r.take(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
  Checkpoint c;
  c.model = model::FlowModel::create(model::encoder_config_from_json(meta.at("encoder")),
                                     model::decoder_config_from_json(meta.at("decoder")), 0);
  c.stats = model::norm_stats_from_json(meta.at("norm_stats"));
  c.best_val_loss = model::double_from_json(meta.at("best_val_loss"));
  c.epoch = meta.at("epoch").get<std::size_t>();

  std::map<std::string, Tensor> stored;
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string key(r.take(r.u32()));
    num::Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    std::vector<double> values(num::shape_numel(shape));
    for (auto& v : values) v = r.f64();
    if (!stored.emplace(key, Tensor::from(std::move(shape), std::move(values), true)).second)
      throw CheckpointError("duplicate tensor '" + key + "'");
  }
  if (!r.done()) throw CheckpointError("trailing bytes after tensor table");
  std::size_t matched = 0;
  c.model.for_each_parameter([&](const std::string& key, Tensor& t) {
    auto it = stored.find(key);
    if (it == stored.end()) throw CheckpointError("missing tensor '" + key + "'");
    if (it->second.shape() != t.shape())
      throw CheckpointError("tensor '" + key + "' has shape " + num::shape_str(it->second.shape()) + ", expected " +
                            num::shape_str(t.shape()));
    t = it->second;
    ++matched;
  });
  if (matched != stored.size()) throw CheckpointError("checkpoint holds tensors the model does not use");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  auto out = mobility::io_detail::open_out(path);
  const auto bytes = serialize_checkpoint(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

// Deep copy with fresh parameter tensors.
inline Checkpoint clone(const Checkpoint& c) {
  Checkpoint out = c;
  out.model = c.model.clone();
  return out;
}

}  // namespace urbanpulse::transfer
