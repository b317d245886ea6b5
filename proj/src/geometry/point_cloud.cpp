#include "cg3d/geometry/point_cloud.hpp"

#include <algorithm>
#include <numeric>

#include "cg3d/util/error.hpp"

namespace cg3d {

void validate(const PointCloud& pc) {
  if (pc.points.empty()) throw ContractError("point cloud is empty");
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    const Vec3& p = pc.points[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw ContractError("point " + std::to_string(i) + " has a non-finite coordinate");
  }
}

Vec3 centroid(const std::vector<Vec3>& points) {
  Vec3 c;
  for (const Vec3& p : points) c = c + p;
  return (1.0 / static_cast<double>(points.size())) * c;
}

PointCloud normalize_unit_sphere(PointCloud pc) {
  validate(pc);
  const Vec3 c = centroid(pc.points);
  double max_r = 0;
  for (Vec3& p : pc.points) {
    p = p - c;
    max_r = std::max(max_r, p.norm());
  }
  if (max_r <= 1e-12) {
    for (Vec3& p : pc.points) p = {};
    return pc;
  }
  const double inv = 1.0 / max_r;
  for (Vec3& p : pc.points) p = inv * p;
  return pc;
}

void AugmentConfig::validate() const {
  if (!(scale_min <= scale_max) || scale_min <= 0) throw ConfigError("augment: need 0 < scale_min <= scale_max");
  if (!(drop_frac >= 0 && drop_frac < 1)) throw ConfigError("augment: drop_frac must lie in [0,1)");
  if (!(jitter_sigma >= 0) || !(jitter_clip >= 0)) throw ConfigError("augment: jitter parameters must be >= 0");
}

PointCloud augment(const PointCloud& pc, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  validate(pc);
  PointCloud out = pc;

  const double s = cfg.scale_min == cfg.scale_max ? cfg.scale_min : uniform(rng, cfg.scale_min, cfg.scale_max);
  if (s != 1.0)
    for (Vec3& p : out.points) p = s * p;

  if (cfg.rotate) {
    const double a = uniform(rng, 0.0, 6.283185307179586);
    const double c = std::cos(a), sn = std::sin(a);
    for (Vec3& p : out.points) p = {c * p.x - sn * p.y, sn * p.x + c * p.y, p.z};
  }

  const double frac = cfg.drop_random ? uniform(rng, 0.0, cfg.drop_frac) : cfg.drop_frac;
  const std::size_t n = out.points.size();
  std::size_t drop = static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 1e-9));
  drop = std::min(drop, n - 1);
  if (drop > 0) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n - drop; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
    idx.resize(n - drop);
    std::sort(idx.begin(), idx.end());
    std::vector<Vec3> kept;
    kept.reserve(idx.size());
    for (std::size_t i : idx) kept.push_back(out.points[i]);
    out.points = std::move(kept);
  }

  if (cfg.jitter_sigma > 0) {
    auto jitter = [&] { return std::clamp(cfg.jitter_sigma * normal01(rng), -cfg.jitter_clip, cfg.jitter_clip); };
    for (Vec3& p : out.points) {
      p.x += jitter();
      p.y += jitter();
      p.z += jitter();
    }
  }
  return out;
}

PointCloud resample(const PointCloud& pc, std::size_t n, Rng* rng) {
  validate(pc);
  if (n == 0) throw ConfigError("resample: n must be positive");
  const std::size_t m = pc.points.size();
  if (m == n) return pc;
  PointCloud out;
  out.label = pc.label;
  out.id = pc.id;
  out.points.reserve(n);
  if (rng == nullptr) {
    for (std::size_t i = 0; i < n; ++i) out.points.push_back(pc.points[(i * m) / n]);
    return out;
  }
  if (m > n) {
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + uniform_index(*rng, m - i)]);
    for (std::size_t i = 0; i < n; ++i) out.points.push_back(pc.points[idx[i]]);
  } else {
    out.points = pc.points;
    while (out.points.size() < n) out.points.push_back(pc.points[uniform_index(*rng, m)]);
  }
  return out;
}

}  // namespace cg3d
