#include "cg3d/geometry/shapes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

#include "cg3d/util/error.hpp"

namespace cg3d {

namespace {

constexpr double kTwoPi = 6.283185307179586;

constexpr std::array<std::string_view, 8> kClasses{"sphere", "cube",  "cylinder", "cone",
                                                   "torus",  "pyramid", "disc",   "capsule"};

Vec3 on_unit_sphere(Rng& rng) {
  for (;;) {
    const Vec3 v{normal01(rng), normal01(rng), normal01(rng)};
    const double n = v.norm();
    if (n > 1e-9) return (1.0 / n) * v;
  }
}

Vec3 disc_point(Rng& rng, double radius, double z) {
  const double r = radius * std::sqrt(uniform01(rng));
  const double a = kTwoPi * uniform01(rng);
  return {r * std::cos(a), r * std::sin(a), z};
}

Vec3 triangle_point(Rng& rng, Vec3 a, Vec3 b, Vec3 c) {
  const double s = std::sqrt(uniform01(rng));
  const double t = uniform01(rng);
  return (1 - s) * a + (s * (1 - t)) * b + (s * t) * c;
}

// Picks a surface part with probability proportional to its area.
std::size_t pick(Rng& rng, std::span<const double> areas) {
  double total = 0;
  for (double a : areas) total += a;
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i + 1 < areas.size(); ++i) {
    if (u < areas[i]) return i;
    u -= areas[i];
  }
  return areas.size() - 1;
}

using Sampler = std::function<Vec3(Rng&)>;

struct ShapeSampler {
  Sampler sample;
  bool centrally_symmetric;
};

ShapeSampler make_sampler(std::string_view name, Rng& rng) {
  if (name == "sphere") return {on_unit_sphere, true};
  if (name == "cube") {
    return {[](Rng& r) {
              const int face = static_cast<int>(uniform_index(r, 6));
              const double u = uniform(r, -1, 1), v = uniform(r, -1, 1), s = face % 2 ? 1.0 : -1.0;
              switch (face / 2) {
                case 0: return Vec3{s, u, v};
                case 1: return Vec3{u, s, v};
                default: return Vec3{u, v, s};
              }
            },
            true};
  }
  if (name == "cylinder" || name == "disc") {
    const double half = name == "cylinder" ? uniform(rng, 0.8, 1.6) : 0.5 * uniform(rng, 0.06, 0.16);
    const std::array<double, 2> areas{kTwoPi * 2 * half, kTwoPi};  // side, both caps (r = 1)
    return {[half, areas](Rng& r) {
              if (pick(r, areas) == 0) {
                const double a = kTwoPi * uniform01(r);
                return Vec3{std::cos(a), std::sin(a), uniform(r, -half, half)};
              }
              return disc_point(r, 1.0, uniform01(r) < 0.5 ? -half : half);
            },
            true};
  }
  if (name == "cone") {
    const double h = uniform(rng, 1.2, 2.4);
    const std::array<double, 2> areas{0.5 * kTwoPi * std::sqrt(1 + h * h), 0.5 * kTwoPi};
    return {[h, areas](Rng& r) {
              if (pick(r, areas) == 0) {
                const double t = std::sqrt(uniform01(r));
                const double a = kTwoPi * uniform01(r);
                return Vec3{t * std::cos(a), t * std::sin(a), h * (1 - t)};
              }
              return disc_point(r, 1.0, 0.0);
            },
            false};
  }
  if (name == "torus") {
    const double tube = uniform(rng, 0.2, 0.4);
    return {[tube](Rng& r) {
              double theta;
              do theta = kTwoPi * uniform01(r);
              while (uniform01(r) * (1 + tube) > 1 + tube * std::cos(theta));
              const double phi = kTwoPi * uniform01(r);
              const double ring = 1 + tube * std::cos(theta);
              return Vec3{ring * std::cos(phi), ring * std::sin(phi), tube * std::sin(theta)};
            },
            true};
  }
  if (name == "pyramid") {
    const double h = uniform(rng, 1.2, 2.2);
    const double side_area = std::sqrt(h * h + 1);  // each triangle: 0.5 * base 2 * slant
    const std::array<double, 5> areas{4.0, side_area, side_area, side_area, side_area};
    return {[h, areas](Rng& r) {
              const Vec3 apex{0, 0, h};
              const std::array<Vec3, 4> base{Vec3{-1, -1, 0}, Vec3{1, -1, 0}, Vec3{1, 1, 0}, Vec3{-1, 1, 0}};
              const std::size_t part = pick(r, areas);
              if (part == 0) return Vec3{uniform(r, -1, 1), uniform(r, -1, 1), 0.0};
              return triangle_point(r, apex, base[part - 1], base[part % 4]);
            },
            false};
  }
  if (name == "capsule") {
    const double half = 0.5 * uniform(rng, 1.2, 2.4);
    const std::array<double, 2> areas{kTwoPi * 2 * half, 2 * kTwoPi};  // body, two hemispheres
    return {[half, areas](Rng& r) {
              if (pick(r, areas) == 0) {
                const double a = kTwoPi * uniform01(r);
                return Vec3{std::cos(a), std::sin(a), uniform(r, -half, half)};
              }
              Vec3 d = on_unit_sphere(r);
              d.z += d.z >= 0 ? half : -half;
              return d;
            },
            true};
  }
  std::string valid;
  for (auto c : kClasses) valid += (valid.empty() ? "" : ", ") + std::string(c);
  throw ConfigError("unknown shape class \"" + std::string(name) + "\"; valid classes: " + valid);
}

}  // namespace

std::span<const std::string_view> shape_classes() { return kClasses; }

bool is_shape_class(std::string_view name) {
  return std::find(kClasses.begin(), kClasses.end(), name) != kClasses.end();
}

PointCloud generate_shape(std::string_view class_name, int n_points, Rng& rng) {
  ShapeSampler s = make_sampler(class_name, rng);
  if (n_points < 16) throw ConfigError("generate_shape: n_points must be >= 16");
  PointCloud pc;
  pc.label = std::string(class_name);
  pc.points.reserve(static_cast<std::size_t>(n_points));
  // Antithetic pairs pin the sample centroid to the true centre of centrally
  // symmetric solids.
  while (pc.points.size() < static_cast<std::size_t>(n_points)) {
    const Vec3 p = s.sample(rng);
    pc.points.push_back(p);
    if (s.centrally_symmetric && pc.points.size() < static_cast<std::size_t>(n_points))
      pc.points.push_back(-1.0 * p);
  }
  return normalize_unit_sphere(std::move(pc));
}

}  // namespace cg3d
