#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "pcqa/errors.hpp"
#include "pcqa/point_cloud.hpp"
#include "pcqa/random.hpp"

namespace pcqa {

struct PreprocessConfig {
  int num_partitions = 12;
  int patch_size = 512;
  std::uint64_t seed = 0;
};

inline constexpr int kMinPatchSize = 7;

inline void validate(const PreprocessConfig& cfg) {
  if (cfg.num_partitions < 1) throw ConfigError("partitions", "num_partitions must be >= 1");
  if (cfg.patch_size < kMinPatchSize) throw ConfigError("patch-size", "patch_size must be >= 7");
}

/// Cloud centered on its bounding box, scaled to unit max extent, colors in [0,1].
struct NormalizedCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;

  std::size_t size() const noexcept { return positions.size(); }
};

struct Partition {
  int slice_index = 0;
  std::vector<std::size_t> point_indices;  // sorted along the slicing axis
};

struct Patch {
  std::size_t centroid_index = 0;
  std::vector<std::size_t> point_indices;  // centroid first, then by distance
  std::vector<Vec3> positions;             // relative to the centroid
  std::vector<Vec3> colors;

  std::size_t size() const noexcept { return point_indices.size(); }
};

inline NormalizedCloud normalize_cloud(const PointCloud& pc) {
  validate(pc);
  Vec3 lo = pc.positions.front(), hi = lo;
  for (const auto& p : pc.positions)
    for (int c = 0; c < 3; ++c) {
      lo[c] = std::min(lo[c], p[c]);
      hi[c] = std::max(hi[c], p[c]);
    }
  Vec3 center{};
  double extent = 0.0;
  for (int c = 0; c < 3; ++c) {
    center[c] = 0.5 * (lo[c] + hi[c]);
    extent = std::max(extent, hi[c] - lo[c]);
  }
  const double scale = extent > 0.0 ? 1.0 / extent : 1.0;

  NormalizedCloud out;
  out.positions.resize(pc.size());
  out.colors.resize(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      out.positions[i][c] = (pc.positions[i][c] - center[c]) * scale;
      out.colors[i][c] = pc.colors[i][c] / 255.0;
    }
  }
  return out;
}

inline int largest_extent_axis(const std::vector<Vec3>& pts) {
  Vec3 lo = pts.front(), hi = lo;
  for (const auto& p : pts)
    for (int c = 0; c < 3; ++c) {
      lo[c] = std::min(lo[c], p[c]);
      hi[c] = std::max(hi[c], p[c]);
    }
  int axis = 0;
  for (int c = 1; c < 3; ++c)
    if (hi[c] - lo[c] > hi[axis] - lo[axis]) axis = c;
  return axis;
}

/// Equal-count slices along the axis of largest extent. The first
/// N % num_partitions slices get one extra point.
inline std::vector<Partition> slice_vertical(const NormalizedCloud& pc, const PreprocessConfig& cfg) {
  validate(cfg);
  const std::size_t n = pc.size();
  const auto parts = static_cast<std::size_t>(cfg.num_partitions);
  if (n == 0 || parts > n)
    throw PartitionError("too-many-slices",
                         std::to_string(parts) + " partitions requested for " + std::to_string(n) + " points");
  const int axis = largest_extent_axis(pc.positions);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ca = pc.positions[a][axis], cb = pc.positions[b][axis];
    return ca != cb ? ca < cb : a < b;
  });

  std::vector<Partition> out(parts);
  const std::size_t base = n / parts, extra = n % parts;
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < parts; ++s) {
    const std::size_t len = base + (s < extra ? 1 : 0);
    out[s].slice_index = static_cast<int>(s);
    out[s].point_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                order.begin() + static_cast<std::ptrdiff_t>(cursor + len));
    cursor += len;
  }
  return out;
}

/// Farthest-point sampling of max(1, |part| / P) centroids. The first pick is
/// drawn uniformly from the partition with a stream derived from (seed, slice).
inline std::vector<std::size_t> sample_centroids(const Partition& part, const NormalizedCloud& pc,
                                                 const PreprocessConfig& cfg) {
  const std::size_t n = part.point_indices.size();
  if (n == 0) throw PartitionError("empty-partition", "slice " + std::to_string(part.slice_index));
  const std::size_t m = std::max<std::size_t>(1, n / static_cast<std::size_t>(cfg.patch_size));

  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(part.slice_index)));
  std::size_t current = static_cast<std::size_t>(rng.below(n));
  std::vector<std::size_t> chosen{part.point_indices[current]};
  chosen.reserve(m);

  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  taken[current] = 1;
  while (chosen.size() < m) {
    const Vec3& c = pc.positions[part.point_indices[current]];
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      min_d2[i] = std::min(min_d2[i], squared_distance(pc.positions[part.point_indices[i]], c));
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    current = best;
    taken[current] = 1;
    chosen.push_back(part.point_indices[current]);
  }
  return chosen;
}

/// For each centroid: the centroid plus its P-1 nearest partition points
/// (ties by lower cloud index). Positions are re-centered on the centroid.
inline std::vector<Patch> extract_patches(const Partition& part, const std::vector<std::size_t>& centroids,
                                          const NormalizedCloud& pc, const PreprocessConfig& cfg) {
  const auto p = static_cast<std::size_t>(cfg.patch_size);
  if (part.point_indices.size() < p)
    throw PartitionError("partition-too-small", "slice " + std::to_string(part.slice_index) + " has " +
                                                    std::to_string(part.point_indices.size()) + " < " +
                                                    std::to_string(p) + " points");
  std::vector<Patch> patches;
  patches.reserve(centroids.size());
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t centroid : centroids) {
    const Vec3& c = pc.positions[centroid];
    cand.clear();
    for (std::size_t idx : part.point_indices)
      if (idx != centroid) cand.emplace_back(squared_distance(pc.positions[idx], c), idx);
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(p - 1), cand.end());

    Patch patch;
    patch.centroid_index = centroid;
    patch.point_indices.reserve(p);
    patch.point_indices.push_back(centroid);
    for (std::size_t i = 0; i + 1 < p; ++i) patch.point_indices.push_back(cand[i].second);
    for (std::size_t idx : patch.point_indices) {
      const Vec3& q = pc.positions[idx];
      patch.positions.push_back({q[0] - c[0], q[1] - c[1], q[2] - c[2]});
      patch.colors.push_back(pc.colors[idx]);
    }
    patches.push_back(std::move(patch));
  }
  return patches;
}

/// Folds every partition smaller than P into a neighbouring slice (the next
/// one, or the previous one for the last slice). Concatenation keeps the
/// along-axis ordering because slices are contiguous.
inline std::vector<Partition> merge_small_partitions(std::vector<Partition> parts, const PreprocessConfig& cfg) {
  const auto p = static_cast<std::size_t>(cfg.patch_size);
  std::vector<Partition> out;
  Partition pending;
  bool has_pending = false;
  for (auto& part : parts) {
    if (has_pending) {
      pending.point_indices.insert(pending.point_indices.end(), part.point_indices.begin(), part.point_indices.end());
    } else {
      pending = std::move(part);
      has_pending = true;
    }
    if (pending.point_indices.size() >= p) {
      out.push_back(std::move(pending));
      has_pending = false;
    }
  }
  if (has_pending) {
    if (out.empty())
      throw PartitionError("partition-too-small",
                           "cloud has " + std::to_string(pending.point_indices.size()) + " points, patch size " +
                               std::to_string(p));
    auto& last = out.back().point_indices;
    last.insert(last.end(), pending.point_indices.begin(), pending.point_indices.end());
  }
  return out;
}

/// Patches of one cloud grouped by partition.
struct PreprocessedCloud {
  std::vector<std::vector<Patch>> partitions;

  std::size_t patch_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : partitions) n += p.size();
    return n;
  }
};

inline PreprocessedCloud preprocess(const PointCloud& pc, const PreprocessConfig& cfg) {
  const NormalizedCloud norm = normalize_cloud(pc);
  auto parts = merge_small_partitions(slice_vertical(norm, cfg), cfg);
  PreprocessedCloud out;
  out.partitions.reserve(parts.size());
  for (const auto& part : parts) out.partitions.push_back(extract_patches(part, sample_centroids(part, norm, cfg), norm, cfg));
  return out;
}

}  // namespace pcqa
