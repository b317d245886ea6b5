#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cg3d/util/rng.hpp"

namespace cg3d {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
};

inline double squared_distance(Vec3 a, Vec3 b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

struct PointCloud {
  std::vector<Vec3> points;
  std::optional<std::string> label;
  std::optional<std::string> id;

  std::size_t size() const noexcept { return points.size(); }
};

// Throws ContractError unless N >= 1 and every coordinate is finite.
void validate(const PointCloud& pc);

Vec3 centroid(const std::vector<Vec3>& points);

// Recentres to the centroid and scales so the farthest point sits on the unit
// sphere. Coincident input collapses to the origin.
PointCloud normalize_unit_sphere(PointCloud pc);

struct AugmentConfig {
  double scale_min = 0.8;
  double scale_max = 1.2;
  bool rotate = true;  // about +z, angle uniform in [0, 2pi)
  // Fraction of points removed. With drop_random the fraction is drawn
  // uniformly from [0, drop_frac] per call.
  double drop_frac = 0.2;
  bool drop_random = true;
  double jitter_sigma = 0.01;
  double jitter_clip = 0.05;

  static AugmentConfig identity() { return {1.0, 1.0, false, 0.0, false, 0.0, 0.0}; }
  void validate() const;
};

// Scale, z-rotation, random drop, clipped Gaussian jitter, in that order.
PointCloud augment(const PointCloud& pc, const AugmentConfig& cfg, Rng& rng);

// Fixed-size view of a cloud for batching. Training draws a random subset
// (with replacement only when short); eval mode takes an evenly strided
// subset and needs no random source.
PointCloud resample(const PointCloud& pc, std::size_t n, Rng* rng);

}  // namespace cg3d
