#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bianet/errors.hpp"
#include "bianet/layers.hpp"
#include "bianet/loss.hpp"
#include "bianet/network.hpp"
#include "bianet/optim.hpp"
#include "bianet/tensor.hpp"

namespace bianet {

// --- JSON for configuration types (keys are sorted, so dumps are canonical) ---

inline void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = nlohmann::json{{"block_widths", c.block_widths},
                     {"block_depths", c.block_depths},
                     {"extra_group_width", c.extra_group_width},
                     {"toy_scale", c.toy_scale}};
}

inline void from_json(const nlohmann::json& j, BackboneConfig& c) {
  c.block_widths = j.value("block_widths", c.block_widths);
  c.block_depths = j.value("block_depths", c.block_depths);
  c.extra_group_width = j.value("extra_group_width", c.extra_group_width);
  c.toy_scale = j.value("toy_scale", c.toy_scale);
}

inline void to_json(nlohmann::json& j, const NetConfig& c) {
  j = nlohmann::json{{"backbone", c.backbone},
                     {"mbam_count", c.mbam_count},
                     {"depth_stream", c.depth_stream},
                     {"ff", c.ff},
                     {"bf", c.bf},
                     {"input_h", c.input_h},
                     {"input_w", c.input_w}};
}

inline void from_json(const nlohmann::json& j, NetConfig& c) {
  if (j.contains("backbone")) c.backbone = j["backbone"].get<BackboneConfig>();
  c.mbam_count = j.value("mbam_count", c.mbam_count);
  c.depth_stream = j.value("depth_stream", c.depth_stream);
  c.ff = j.value("ff", c.ff);
  c.bf = j.value("bf", c.bf);
  c.input_h = j.value("input_h", c.input_h);
  c.input_w = j.value("input_w", c.input_w);
}

inline std::string canonical_config_text(const NetConfig& c) {
  return nlohmann::json(c).dump();
}

inline NetConfig net_config_from_text(const std::string& text) {
  return nlohmann::json::parse(text).get<NetConfig>();
}

// --- Binary checkpoint: magic, version, config blob, named f32 tensors. ---

inline constexpr char kCheckpointMagic[4] = {'B', 'I', 'A', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  void bytes(void* dst, std::size_t n) {
    if (pos_ + n > data_.size()) {
      throw IoError(IoCode::truncated, "checkpoint: truncated file");
    }
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t u64() {
    std::uint64_t v = 0;
    unsigned char b[8];
    bytes(b, 8);
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path,
                            const NetConfig& config,
                            const ParamStore<float>& params) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  const std::string blob = canonical_config_text(config);
  detail::put_u64(out, blob.size());
  out += blob;
  detail::put_u64(out, params.items().size());
  for (const auto& [name, t] : params.items()) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.values()) detail::put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !f.write(out.data(), static_cast<std::streamsize>(out.size()))) {
    throw IoError(IoCode::generic, "checkpoint: cannot write " + path.string());
  }
}

struct LoadedCheckpoint {
  NetConfig config;
  std::vector<std::pair<std::string, Tensor<float>>> params;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(IoCode::generic, "checkpoint: cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  detail::Reader r(std::move(data));

  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError(IoCode::bad_magic, "checkpoint: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError(IoCode::unsupported_version,
                  "checkpoint: unsupported version " + std::to_string(version));
  }
  LoadedCheckpoint out;
  const std::uint64_t blob_len = r.u64();
  const std::string blob = r.str(blob_len);
  try {
    out.config = net_config_from_text(blob);
  } catch (const nlohmann::json::exception&) {
    throw IoError(IoCode::generic, "checkpoint: malformed config blob");
  }
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const std::uint32_t ndims = r.u32();
    Shape shape(ndims);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = r.f32();
    out.params.emplace_back(std::move(name),
                            Tensor<float>::from(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) {
    throw IoError(IoCode::truncated, "checkpoint: trailing bytes");
  }
  return out;
}

// Strict restore: the file must carry exactly the model's parameter set.
inline void apply_checkpoint(BiANet<float>& model, const LoadedCheckpoint& ckpt) {
  auto& store = model.params();
  for (const auto& [name, t] : ckpt.params) {
    if (!store.has(name)) {
      throw IoError(IoCode::unknown_param, "checkpoint: unknown parameter " + name);
    }
    Tensor<float>& dst = store.get(name);
    if (dst.shape() != t.shape()) {
      throw IoError(IoCode::shape_mismatch,
                    "checkpoint: shape mismatch for " + name);
    }
    dst.values() = t.values();
  }
  if (ckpt.params.size() != store.items().size()) {
    throw IoError(IoCode::unknown_param,
                  "checkpoint: parameter set does not cover the model");
  }
}

inline BiANet<float> model_from_checkpoint(const std::filesystem::path& path,
                                           std::uint64_t seed = 0) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  BiANet<float> model(ckpt.config, seed);
  apply_checkpoint(model, ckpt);
  return model;
}

// Partial restore for externally converted weights: loads every parameter in
// the file whose name exists in the model (shapes must match), e.g. a bare
// backbone subset. Returns the number of tensors applied.
inline std::size_t import_parameters(BiANet<float>& model,
                                     const std::filesystem::path& path) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  auto& store = model.params();
  std::size_t applied = 0;
  for (const auto& [name, t] : ckpt.params) {
    if (!store.has(name)) continue;
    Tensor<float>& dst = store.get(name);
    if (dst.shape() != t.shape()) {
      throw IoError(IoCode::shape_mismatch,
                    "import: shape mismatch for " + name);
    }
    dst.values() = t.values();
    ++applied;
  }
  return applied;
}

}  // namespace bianet
