/**
 * @file checkpoint.hpp
 * @brief "ODF1" named-array checkpoints.
 *
 * Layout, all integers little-endian:
 *   "ODF1" | u32 count | count × (u32 name_len | name | u8 rank |
 *   rank × u32 dim | f32 payload)
 * Values are stored as f32; loading widens back to double.
 */
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "odformer/model.hpp"
#include "odformer/netpbm.hpp"

namespace odf {

inline constexpr char kCheckpointMagic[4] = {'O', 'D', 'F', '1'};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw FormatError("checkpoint truncated reading " + std::string(what) + " at byte " + std::to_string(pos_));
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedArray>& arrays) {
  std::set<std::string> names;
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (!names.insert(a.name).second) throw FormatError("checkpoint: duplicate array name " + a.name);
    if (a.shape.empty() || a.shape.size() > 255) throw ShapeError("checkpoint: array " + a.name + " has bad rank");
    if (numel(a.shape) != a.values.size())
      throw ShapeError("checkpoint: array " + a.name + " shape " + to_string(a.shape) + " vs " +
                       std::to_string(a.values.size()) + " values");
    detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    out.push_back(static_cast<char>(a.shape.size()));
    for (auto d : a.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : a.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline std::vector<NamedArray> decode_checkpoint(const std::string& bytes) {
  detail::ByteReader in(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic, expected ODF1");
  in.take(4, "magic");
  const std::uint32_t count = in.u32("array count");
  std::vector<NamedArray> out;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = in.take(in.u32("name length"), "name");
    if (!names.insert(a.name).second) throw FormatError("checkpoint: duplicate array name " + a.name);
    const std::uint8_t rank = in.u8("rank");
    if (rank == 0) throw FormatError("checkpoint: array " + a.name + " has rank 0");
    std::size_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      a.shape.push_back(in.u32("dims"));
      n *= a.shape.back();
      if (n > bytes.size()) throw FormatError("checkpoint: array " + a.name + " larger than file");
    }
    in.need(4 * n, "payload");
    a.values.resize(n);
    for (auto& f : a.values) f = std::bit_cast<float>(in.u32("payload"));
    out.push_back(std::move(a));
  }
  if (!in.done())
    throw FormatError("checkpoint: " + std::to_string(bytes.size() - in.pos()) + " trailing bytes after last array");
  return out;
}

inline NamedArray to_array(const std::string& name, const Tensor& t) {
  NamedArray a{name, t.shape(), {}};
  a.values.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) a.values.push_back(static_cast<float>(t[i]));
  return a;
}

inline void save_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays) {
  detail::write_file(path, encode_checkpoint(arrays));
}

inline std::vector<NamedArray> load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path));
}

// Architecture fields stored alongside the weights so a checkpoint is
// self-describing.
namespace detail {

inline NamedArray meta_array(const std::string& name, const std::vector<std::size_t>& v) {
  NamedArray a{"meta." + name, {v.size()}, {}};
  for (auto x : v) a.values.push_back(static_cast<float>(x));
  return a;
}

}  // namespace detail

inline std::vector<NamedArray> model_arrays(const Model& model) {
  const ModelConfig& c = model.config();
  std::vector<NamedArray> out;
  out.push_back(detail::meta_array("m", {c.atrous_branches}));
  out.push_back(detail::meta_array("depths", c.depths));
  out.push_back(detail::meta_array("heads", c.heads));
  out.push_back(detail::meta_array("channels", {c.channels}));
  out.push_back(detail::meta_array("window", {c.window}));
  out.push_back(detail::meta_array("decoder_channels", {c.decoder_channels}));
  out.push_back(detail::meta_array("classes", {c.classes}));
  out.push_back(detail::meta_array("input_side", {c.input_side}));
  out.push_back(detail::meta_array("crop", {c.crop}));
  for (const auto& p : model.parameters()) out.push_back(to_array(p.name, p.tensor));
  for (const auto& b : model.buffers()) out.push_back(to_array(b.name, b.tensor));
  return out;
}

inline void save_model(const std::string& path, const Model& model) { save_checkpoint(path, model_arrays(model)); }

/// Rebuilds the architecture fields of a config from checkpoint metadata.
inline ModelConfig config_from_arrays(const std::vector<NamedArray>& arrays, ModelConfig base = ModelConfig{}) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto get = [&](const std::string& key) {
    auto it = by_name.find("meta." + key);
    if (it == by_name.end()) throw FormatError("checkpoint: missing meta." + key);
    std::vector<std::size_t> v;
    for (float f : it->second->values) {
      if (!(f >= 0.0f && f < 1e9f) || f != static_cast<float>(static_cast<std::uint32_t>(f)))
        throw FormatError("checkpoint: meta." + key + " is not a count");
      v.push_back(static_cast<std::size_t>(f));
    }
    return v;
  };
  auto one = [&](const std::string& key) {
    auto v = get(key);
    if (v.size() != 1) throw FormatError("checkpoint: meta." + key + " must hold one value");
    return v[0];
  };
  base.atrous_branches = one("m");
  base.depths = get("depths");
  base.heads = get("heads");
  base.channels = one("channels");
  base.window = one("window");
  base.decoder_channels = one("decoder_channels");
  base.classes = one("classes");
  base.input_side = one("input_side");
  base.crop = one("crop");
  return base;
}

/// Copies parameters and running statistics into `model`. Every model
/// tensor must be present with a matching shape.
inline void assign_arrays(Model& model, const std::vector<NamedArray>& arrays) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto fill = [&](const NamedTensors& targets) {
    for (const auto& t : targets) {
      auto it = by_name.find(t.name);
      if (it == by_name.end()) throw FormatError("checkpoint: missing array " + t.name);
      if (it->second->shape != t.tensor.shape())
        throw FormatError("checkpoint: array " + t.name + " has shape " + to_string(it->second->shape) +
                          ", model expects " + to_string(t.tensor.shape()));
      Tensor dst = t.tensor;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(it->second->values[i]);
    }
  };
  fill(model.parameters());
  fill(model.buffers());
  model.mark_running_stats_ready();
}

inline Model load_model(const std::string& path) {
  const auto arrays = load_checkpoint(path);
  ModelConfig cfg;
  try {
    cfg = config_from_arrays(arrays);
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid architecture: ") + e.what());
  }
  Model model(cfg);
  assign_arrays(model, arrays);
  return model;
}

}  // namespace odf
