#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcqa/errors.hpp"

namespace pcqa {

using Vec3 = std::array<double, 3>;
using Rgb8 = std::array<std::uint8_t, 3>;

/// A colored point cloud. Colors are stored as 8-bit channels; the model maps
/// them to [0,1] during normalization.
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Rgb8> colors;
  std::string name;

  std::size_t size() const noexcept { return positions.size(); }
};

/// Throws ShapeError when the cloud breaks the invariants (non-empty, matching
/// lengths, finite positions).
inline void validate(const PointCloud& pc) {
  if (pc.positions.empty()) throw ShapeError("empty-cloud", pc.name);
  if (pc.positions.size() != pc.colors.size())
    throw ShapeError("length-mismatch", std::to_string(pc.positions.size()) + " positions vs " +
                                            std::to_string(pc.colors.size()) + " colors");
  for (const auto& p : pc.positions)
    for (double c : p)
      if (!std::isfinite(c)) throw ShapeError("non-finite-position", pc.name);
}

inline double squared_distance(const Vec3& a, const Vec3& b) noexcept {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace pcqa
