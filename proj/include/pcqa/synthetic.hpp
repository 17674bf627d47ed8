#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "pcqa/point_cloud.hpp"
#include "pcqa/random.hpp"

namespace pcqa::synthetic {

enum class Shape { sphere, torus, cylinder, box, saddle };

inline const char* shape_name(Shape s) {
  switch (s) {
    case Shape::sphere: return "sphere";
    case Shape::torus: return "torus";
    case Shape::cylinder: return "cylinder";
    case Shape::box: return "box";
    case Shape::saddle: return "saddle";
  }
  return "?";
}

namespace detail {

inline Vec3 surface_point(Shape s, Rng& rng) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  switch (s) {
    case Shape::sphere: {
      const double z = rng.uniform(-1.0, 1.0), t = rng.uniform(0.0, two_pi), r = std::sqrt(1.0 - z * z);
      return {r * std::cos(t), r * std::sin(t), z};
    }
    case Shape::torus: {
      // Rejection sampling keeps the density uniform over the surface.
      const double big = 1.0, small = 0.35;
      for (;;) {
        const double u = rng.uniform(0.0, two_pi), v = rng.uniform(0.0, two_pi);
        if (rng.uniform() * (big + small) > big + small * std::cos(v)) continue;
        return {(big + small * std::cos(v)) * std::cos(u), (big + small * std::cos(v)) * std::sin(u), small * std::sin(v)};
      }
    }
    case Shape::cylinder: {
      const double t = rng.uniform(0.0, two_pi);
      return {0.5 * std::cos(t), 0.5 * std::sin(t), rng.uniform(-1.0, 1.0)};
    }
    case Shape::box: {
      const auto face = rng.below(6);
      const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0), side = face % 2 ? 1.0 : -1.0;
      switch (face / 2) {
        case 0: return {side, a * 0.7, b * 0.5};
        case 1: return {a, side * 0.7, b * 0.5};
        default: return {a, b * 0.7, side * 0.5};
      }
    }
    case Shape::saddle: {
      const double x = rng.uniform(-1.0, 1.0), y = rng.uniform(-1.0, 1.0);
      return {x, y, 0.5 * (x * x - y * y)};
    }
  }
  return {0, 0, 0};
}

inline std::uint8_t channel(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

/// Uniform samples on a smooth surface with a smooth position-dependent color.
/// Coordinates are rounded to float so the cloud survives PLY round trips exactly.
inline PointCloud make_shape(Shape s, std::size_t n, std::uint64_t seed) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(s) + 101));
  PointCloud pc;
  pc.name = shape_name(s);
  pc.positions.reserve(n);
  pc.colors.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p = detail::surface_point(s, rng);
    for (auto& c : p) c = static_cast<double>(static_cast<float>(c));
    pc.positions.push_back(p);
    pc.colors.push_back({detail::channel(0.5 + 0.4 * std::sin(2.0 * p[0])), detail::channel(0.5 + 0.4 * std::cos(1.5 * p[1])),
                         detail::channel(0.5 + 0.4 * std::sin(1.0 + p[2]))});
  }
  return pc;
}

inline double bounding_box_diagonal(const PointCloud& pc) {
  Vec3 lo = pc.positions.front(), hi = lo;
  for (const auto& p : pc.positions)
    for (int c = 0; c < 3; ++c) {
      lo[c] = std::min(lo[c], p[c]);
      hi[c] = std::max(hi[c], p[c]);
    }
  return std::sqrt(squared_distance(lo, hi));
}

/// Gaussian position jitter with sigma = fraction x bounding-box diagonal.
inline PointCloud jitter(const PointCloud& pc, double fraction, std::uint64_t seed) {
  PointCloud out = pc;
  const double sigma = fraction * bounding_box_diagonal(pc);
  Rng rng(seed);
  for (auto& p : out.positions)
    for (auto& c : p) c = static_cast<double>(static_cast<float>(c + sigma * rng.normal()));
  return out;
}

}  // namespace pcqa::synthetic
