#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "vist/adam.hpp"
#include "vist/binary_io.hpp"
#include "vist/errors.hpp"
#include "vist/model.hpp"

// Checkpoint file layout (little-endian):
//   "MSTK" | u8 version | u32 tensor count |
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank × u32 dims, f32 payload
// Model and meta tensors come first in lexicographic order, followed by the
// optimizer state under "opt/" names, also sorted. The resolved run config is
// kept next to the file as "<path>.config" (key=value lines).

namespace vist {

inline constexpr char kCheckpointMagic[4] = {'M', 'S', 'T', 'K'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct StoredTensor {
  Shape shape;
  std::vector<float> data;

  friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

struct Checkpoint {
  std::map<std::string, StoredTensor> tensors;  // includes "meta/" and "opt/" entries
  std::map<std::string, std::string> config_echo;

  std::size_t epoch() const { return meta("epoch"); }
  std::size_t step() const { return meta("step"); }

  std::size_t meta(const std::string& key) const {
    auto it = tensors.find("meta/" + key);
    if (it == tensors.end() || it->second.data.size() != 1) {
      throw CheckpointError("checkpoint lacks meta/" + key);
    }
    return static_cast<std::size_t>(it->second.data[0]);
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline bool is_optimizer_name(const std::string& name) { return name.rfind("opt/", 0) == 0; }

inline void put_meta(Checkpoint& ck, const std::string& key, std::size_t value) {
  ck.tensors["meta/" + key] = {Shape{1}, {static_cast<float>(value)}};
}

template <typename T>
StoredTensor store(const Shape& shape, std::span<const T> values) {
  StoredTensor s;
  s.shape = shape;
  s.data.reserve(values.size());
  for (T v : values) s.data.push_back(static_cast<float>(v));
  return s;
}

}  // namespace detail

template <typename T>
Checkpoint make_checkpoint(ModelParams<T>& params, const std::type_identity_t<OptimizerState<T>>* opt, std::size_t epoch,
                           std::size_t step, std::map<std::string, std::string> config_echo = {}) {
  Checkpoint ck;
  ck.config_echo = std::move(config_echo);
  const auto& c = params.config;
  detail::put_meta(ck, "image_height", c.geometry.height);
  detail::put_meta(ck, "image_width", c.geometry.width);
  detail::put_meta(ck, "channels", c.geometry.channels);
  detail::put_meta(ck, "patch", c.geometry.patch);
  detail::put_meta(ck, "patch_dim", c.patch_dim);
  detail::put_meta(ck, "blocks", c.blocks);
  detail::put_meta(ck, "enc_hidden", c.enc_hidden);
  detail::put_meta(ck, "attn_dim", c.attn_dim);
  detail::put_meta(ck, "dec_hidden", c.dec_hidden);
  detail::put_meta(ck, "embed_dim", c.embed_dim);
  detail::put_meta(ck, "rounds", c.rounds);
  detail::put_meta(ck, "vocab_size", c.vocab_size);
  detail::put_meta(ck, "epoch", epoch);
  detail::put_meta(ck, "step", step);
  for (const auto& [name, t] : params.named()) {
    ck.tensors[name] = detail::store<T>(t.shape(), t.data());
  }
  if (opt != nullptr) {
    ck.tensors["opt/step"] = {Shape{1}, {static_cast<float>(opt->step)}};
    for (const auto& [name, t] : params.named()) {
      auto it = opt->moments.find(name);
      if (it == opt->moments.end()) continue;
      ck.tensors["opt/m/" + name] = detail::store<T>(t.shape(), std::span<const T>(it->second.m));
      ck.tensors["opt/v/" + name] = detail::store<T>(t.shape(), std::span<const T>(it->second.v));
    }
  }
  return ck;
}

inline ModelConfig checkpoint_model_config(const Checkpoint& ck) {
  ModelConfig c;
  c.geometry.height = ck.meta("image_height");
  c.geometry.width = ck.meta("image_width");
  c.geometry.channels = ck.meta("channels");
  c.geometry.patch = ck.meta("patch");
  c.patch_dim = ck.meta("patch_dim");
  c.blocks = ck.meta("blocks");
  c.enc_hidden = ck.meta("enc_hidden");
  c.attn_dim = ck.meta("attn_dim");
  c.dec_hidden = ck.meta("dec_hidden");
  c.embed_dim = ck.meta("embed_dim");
  c.rounds = ck.meta("rounds");
  c.vocab_size = ck.meta("vocab_size");
  return c;
}

template <typename T>
ModelParams<T> restore_model(const Checkpoint& ck) {
  auto params = ModelParams<T>::init(checkpoint_model_config(ck), 0);
  params.for_each([&](const std::string& name, Tensor<T>& t) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw CheckpointError("checkpoint lacks tensor " + name);
    if (it->second.shape != t.shape()) {
      throw CheckpointError("checkpoint tensor " + name + " has shape " +
                            shape_str(it->second.shape) + ", model expects " + shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second.data[i]);
  });
  return params;
}

template <typename T>
OptimizerState<T> restore_optimizer(const Checkpoint& ck, ModelParams<T>& params) {
  OptimizerState<T> opt;
  auto it = ck.tensors.find("opt/step");
  if (it == ck.tensors.end()) return opt;
  opt.step = static_cast<std::size_t>(it->second.data.at(0));
  for (const auto& [name, t] : params.named()) {
    auto m = ck.tensors.find("opt/m/" + name);
    auto v = ck.tensors.find("opt/v/" + name);
    if (m == ck.tensors.end() || v == ck.tensors.end()) continue;
    auto& mom = opt.moments[name];
    mom.m.assign(m->second.data.begin(), m->second.data.end());
    mom.v.assign(v->second.data.begin(), v->second.data.end());
  }
  return opt;
}

inline std::vector<std::string> checkpoint_write_order(const Checkpoint& ck) {
  std::vector<std::string> names, opt;
  for (const auto& [name, t] : ck.tensors) (detail::is_optimizer_name(name) ? opt : names).push_back(name);
  names.insert(names.end(), opt.begin(), opt.end());
  return names;
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic, 4);
  binary::put_u8(out, kCheckpointVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& name : checkpoint_write_order(ck)) {
    const auto& t = ck.tensors.at(name);
    if (name.size() > 0xffff) throw CheckpointError("tensor name too long: " + name);
    if (t.shape.size() > 0xff) throw CheckpointError("tensor rank too large: " + name);
    binary::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binary::put_u8(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) binary::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data) binary::put_f32(out, v);
  }
  return out.str();
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  binary::Reader r(bytes);
  std::string magic;
  if (!r.bytes(4, magic)) throw CheckpointError("truncated checkpoint");
  if (magic != std::string(kCheckpointMagic, 4)) throw CheckpointError("corrupt checkpoint: bad magic");
  std::uint8_t version = 0;
  if (!r.u8(version)) throw CheckpointError("truncated checkpoint");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported version " + std::to_string(version));
  }
  std::uint32_t count = 0;
  if (!r.u32(count)) throw CheckpointError("truncated checkpoint");
  Checkpoint ck;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint16_t len = 0;
    std::string name;
    std::uint8_t rank = 0;
    if (!r.u16(len) || !r.bytes(len, name) || !r.u8(rank)) throw CheckpointError("truncated checkpoint");
    StoredTensor t;
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      std::uint32_t dim = 0;
      if (!r.u32(dim)) throw CheckpointError("truncated checkpoint");
      t.shape.push_back(dim);
      n *= dim;
    }
    if (n * 4 > r.remaining()) throw CheckpointError("truncated checkpoint");
    t.data.resize(static_cast<std::size_t>(n));
    for (auto& v : t.data) r.f32(v);
    if (!ck.tensors.emplace(name, std::move(t)).second) {
      throw CheckpointError("corrupt checkpoint: duplicate tensor " + name);
    }
  }
  if (!r.at_end()) throw CheckpointError("corrupt checkpoint: trailing bytes");
  return ck;
}

inline std::filesystem::path config_sidecar(const std::filesystem::path& path) {
  return path.string() + ".config";
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    const auto bytes = encode_checkpoint(ck);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::ofstream cfg(config_sidecar(path));
  for (const auto& [k, v] : ck.config_echo) cfg << k << '=' << v << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto ck = decode_checkpoint(bytes);
  std::ifstream cfg(config_sidecar(path));
  std::string line;
  while (std::getline(cfg, line)) {
    auto eq = line.find('=');
    if (eq != std::string::npos) ck.config_echo[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return ck;
}

}  // namespace vist
