#pragma once

#include <filesystem>
#include <string>

#include "pcqa/model.hpp"
#include "pcqa/ply.hpp"
#include "pcqa/synthetic.hpp"

namespace testutil {

/// Narrow model that keeps training tests fast.
inline pcqa::ModelConfig tiny_model() {
  pcqa::ModelConfig cfg;
  cfg.layer_dims = {4, 4};
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.ff_dim = 12;
  cfg.regressor_dims = {8, 4, 1};
  return cfg;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pcqa_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Writes a synthetic cloud as binary PLY and returns its path.
inline std::string write_shape(const std::filesystem::path& dir, const std::string& file, pcqa::synthetic::Shape s,
                               std::size_t n, std::uint64_t seed, double jitter = 0.0) {
  auto pc = pcqa::synthetic::make_shape(s, n, seed);
  if (jitter > 0) pc = pcqa::synthetic::jitter(pc, jitter, seed + 1000);
  const auto path = (dir / file).string();
  pcqa::ply::save_ply(path, pc);
  return path;
}

}  // namespace testutil
