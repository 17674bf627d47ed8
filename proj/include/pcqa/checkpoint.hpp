#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pcqa/errors.hpp"
#include "pcqa/model.hpp"
#include "pcqa/partitioner.hpp"

namespace pcqa {

/// Inference artifact: configuration plus parameters. Optimizer state is not stored.
struct Checkpoint {
  ModelConfig model;
  PreprocessConfig preprocess;
  ModelParams params;
};

inline constexpr char kCheckpointMagic[4] = {'P', 'C', 'Q', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const ModelConfig& m, const PreprocessConfig& p) {
  return {{"model",
           {{"k", m.k},
            {"layer_dims", m.layer_dims},
            {"embed_dim", m.embed_dim},
            {"heads", m.heads},
            {"ff_dim", m.ff_dim},
            {"regressor_dims", m.regressor_dims},
            {"leaky_slope", m.leaky_slope},
            {"graph_norm_eps", m.graph_norm_eps},
            {"layer_norm_eps", m.layer_norm_eps}}},
          {"preprocess", {{"num_partitions", p.num_partitions}, {"patch_size", p.patch_size}, {"seed", p.seed}}}};
}

inline void config_from_json(const nlohmann::json& j, ModelConfig& m, PreprocessConfig& p) {
  const auto& jm = j.at("model");
  m.k = jm.at("k").get<int>();
  m.layer_dims = jm.at("layer_dims").get<std::vector<int>>();
  m.embed_dim = jm.at("embed_dim").get<int>();
  m.heads = jm.at("heads").get<int>();
  m.ff_dim = jm.at("ff_dim").get<int>();
  m.regressor_dims = jm.at("regressor_dims").get<std::vector<int>>();
  m.leaky_slope = jm.at("leaky_slope").get<double>();
  m.graph_norm_eps = jm.at("graph_norm_eps").get<double>();
  m.layer_norm_eps = jm.at("layer_norm_eps").get<double>();
  const auto& jp = j.at("preprocess");
  p.num_partitions = jp.at("num_partitions").get<int>();
  p.patch_size = jp.at("patch_size").get<int>();
  p.seed = jp.at("seed").get<std::uint64_t>();
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_le(std::string_view in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace detail

/// Layout: "PCQM" | u32 version | u64 manifest length | JSON manifest | f64 blobs.
/// Tensor offsets in the manifest are byte offsets from the start of the blob area.
inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["config"] = config_to_json(ck.model, ck.preprocess);
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  const auto named = ck.params.named();
  for (const auto& [name, t] : named) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel() * sizeof(double);
  }
  manifest["data_bytes"] = offset;
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : named) {
    const auto v = t.values();
    const std::size_t at = out.size();
    out.resize(at + v.size() * sizeof(double));
    std::memcpy(out.data() + at, v.data(), v.size() * sizeof(double));
  }
  return out;
}

/// Parses into a fresh Checkpoint; nothing is returned on failure.
inline Checkpoint deserialize_checkpoint(std::string_view in) {
  if (in.size() < 16) throw CheckpointError("truncated", "file shorter than the fixed header");
  if (std::memcmp(in.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("bad-magic");
  const auto version = static_cast<std::uint32_t>(detail::get_le(in, 4, 4));
  if (version != kCheckpointVersion) throw CheckpointError("unsupported-version", std::to_string(version));
  const std::uint64_t len = detail::get_le(in, 8, 8);
  if (len > in.size() - 16) throw CheckpointError("truncated", "manifest extends past end of file");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad-manifest", e.what());
  }
  const std::string_view blob = in.substr(16 + len);

  Checkpoint ck;
  try {
    config_from_json(manifest.at("config"), ck.model, ck.preprocess);
    validate(ck.model);
    ck.params = init_params(ck.model, 0);
    const auto& descs = manifest.at("tensors");
    const auto named = ck.params.named();
    if (descs.size() != named.size())
      throw CheckpointError("tensor-count", std::to_string(descs.size()) + " stored vs " + std::to_string(named.size()));
    const auto data_bytes = manifest.at("data_bytes").get<std::uint64_t>();
    if (data_bytes != blob.size())
      throw CheckpointError("length-mismatch", "manifest declares " + std::to_string(data_bytes) + " data bytes, file has " +
                                                  std::to_string(blob.size()));
    for (std::size_t i = 0; i < named.size(); ++i) {
      const auto& d = descs[i];
      auto [name, t] = named[i];
      if (d.at("name").get<std::string>() != name) throw CheckpointError("tensor-name", d.at("name").get<std::string>());
      if (d.at("shape").get<ad::Shape>() != t.shape()) throw CheckpointError("tensor-shape", name);
      const auto off = d.at("offset").get<std::uint64_t>();
      const std::size_t bytes = t.numel() * sizeof(double);
      if (off > blob.size() || bytes > blob.size() - off) throw CheckpointError("length-mismatch", name);
      std::memcpy(t.values().data(), blob.data() + off, bytes);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad-manifest", e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError("bad-config", e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("io", "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("io", "write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("io", "cannot open '" + path + "'");
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

}  // namespace pcqa
