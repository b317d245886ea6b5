#include "cg3d/geometry/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cg3d/util/error.hpp"

namespace cg3d {

SceneCloud compose_scene(const std::vector<Placement>& objects, bool floor) {
  if (objects.empty()) throw ContractError("compose_scene needs at least one object");
  SceneCloud scene;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const Placement& pl = objects[i];
    if (!std::isfinite(pl.scale) || !(pl.scale > 0) || !std::isfinite(pl.translation.x) ||
        !std::isfinite(pl.translation.y) || !std::isfinite(pl.translation.z))
      throw ContractError("placement " + std::to_string(i) + " is not finite");
    validate(pl.object);
    for (const Vec3& p : pl.object.points) {
      scene.points.push_back(pl.scale * p + pl.translation);
      scene.object_ids.push_back(static_cast<int>(i));
    }
  }
  if (!floor) return scene;

  constexpr double inf = std::numeric_limits<double>::infinity();
  Vec3 lo{inf, inf, inf}, hi{-inf, -inf, -inf};
  for (const Vec3& p : scene.points) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const double pad = 0.5;
  const int side = std::max(8, static_cast<int>(std::ceil(std::sqrt(0.5 * static_cast<double>(scene.points.size())))));
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) {
      const double u = static_cast<double>(i) / (side - 1), v = static_cast<double>(j) / (side - 1);
      scene.points.push_back({lo.x - pad + u * (hi.x - lo.x + 2 * pad), lo.y - pad + v * (hi.y - lo.y + 2 * pad), lo.z});
      scene.object_ids.push_back(kFloorId);
    }
  return scene;
}

}  // namespace cg3d
