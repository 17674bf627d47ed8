#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "pcqa/errors.hpp"
#include "pcqa/manifest.hpp"
#include "pcqa/model.hpp"
#include "pcqa/partitioner.hpp"
#include "pcqa/ply.hpp"
#include "pcqa/trainer.hpp"

namespace pcqa {

inline constexpr int kMinPartitions = 8;
inline constexpr int kMaxPartitions = 24;

/// Settings shared by the command-line tools. Values come from an optional
/// key=value file and are then overridden by explicit flags.
struct RunConfig {
  int partitions = 12;
  int patch_size = 512;
  int k = 6;
  std::uint64_t seed = 0;
  double learning_rate = 1e-4;
  int epochs = 100;
  unsigned threads = 1;
  bool shuffle = true;
  std::map<std::string, std::string> paths;  // manifest, out, ckpt, input, loss_history
};

using ConfigMap = std::map<std::string, std::string>;

/// `key = value` lines; blank lines and `#` comments are ignored.
inline ConfigMap parse_config_text(std::string_view text) {
  ConfigMap out;
  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("syntax", "line " + std::to_string(line_no) + ": expected key=value");
    std::string key(detail::trim(line.substr(0, eq)));
    for (auto& c : key)
      if (c == '-') c = '_';
    if (key.empty()) throw ConfigError("syntax", "line " + std::to_string(line_no) + ": empty key");
    out[key] = std::string(detail::trim(line.substr(eq + 1)));
  }
  return out;
}

namespace detail {

template <class T>
T parse_value(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("bad-value", key + "='" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("bad-value", key + "='" + v + "'");
}

}  // namespace detail

inline void apply_config(RunConfig& rc, const ConfigMap& m) {
  for (const auto& [key, v] : m) {
    if (key == "partitions") rc.partitions = detail::parse_value<int>(key, v);
    else if (key == "patch_size") rc.patch_size = detail::parse_value<int>(key, v);
    else if (key == "k") rc.k = detail::parse_value<int>(key, v);
    else if (key == "seed") rc.seed = detail::parse_value<std::uint64_t>(key, v);
    else if (key == "learning_rate" || key == "lr") rc.learning_rate = detail::parse_value<double>(key, v);
    else if (key == "epochs") rc.epochs = detail::parse_value<int>(key, v);
    else if (key == "threads") rc.threads = detail::parse_value<unsigned>(key, v);
    else if (key == "shuffle") rc.shuffle = detail::parse_bool(key, v);
    else if (key == "manifest" || key == "out" || key == "ckpt" || key == "input" || key == "loss_history") rc.paths[key] = v;
    else throw ConfigError("unknown-key", key);
  }
}

inline void validate(const RunConfig& rc) {
  if (rc.partitions < kMinPartitions || rc.partitions > kMaxPartitions)
    throw ConfigError("partitions", "partitions must be in [" + std::to_string(kMinPartitions) + ", " +
                                        std::to_string(kMaxPartitions) + "], got " + std::to_string(rc.partitions));
  if (rc.k < 1) throw ConfigError("k", "k must be >= 1");
  if (rc.patch_size < rc.k + 1 || rc.patch_size < kMinPatchSize)
    throw ConfigError("patch-size", "patch size must exceed k and be at least 7");
  if (!(rc.learning_rate > 0.0)) throw ConfigError("learning-rate", "learning rate must be positive");
  if (rc.epochs < 1) throw ConfigError("epochs", "epochs must be >= 1");
  if (rc.threads < 1) throw ConfigError("threads", "threads must be >= 1");
}

/// PCQA_THREADS when set, otherwise 1.
inline unsigned threads_from_env() {
  const char* v = std::getenv("PCQA_THREADS");
  if (!v || !*v) return 1;
  return detail::parse_value<unsigned>("PCQA_THREADS", v);
}

inline PreprocessConfig preprocess_config(const RunConfig& rc) { return {rc.partitions, rc.patch_size, rc.seed}; }

inline ModelConfig model_config(const RunConfig& rc) {
  ModelConfig m;
  m.k = rc.k;
  return m;
}

inline TrainConfig train_config(const RunConfig& rc) {
  TrainConfig t;
  t.epochs = rc.epochs;
  t.seed = rc.seed;
  t.learning_rate = rc.learning_rate;
  t.shuffle = rc.shuffle;
  return t;
}

}  // namespace pcqa
