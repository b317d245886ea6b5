#pragma once

#include <vector>

#include "cg3d/geometry/point_cloud.hpp"

namespace cg3d {

inline constexpr int kFloorId = -1;
inline constexpr int kUnlabeled = -2;

struct SceneCloud {
  std::vector<Vec3> points;
  // Ground truth per point (evaluation only). Empty when unknown, e.g. for
  // uploaded scenes.
  std::vector<int> object_ids;

  std::size_t size() const noexcept { return points.size(); }
};

struct Placement {
  PointCloud object;
  Vec3 translation;
  double scale = 1.0;
};

// Union of the placed objects; object i gets id i. With `floor`, a regular
// grid at the lowest object height spanning the padded footprint is appended
// with id kFloorId.
SceneCloud compose_scene(const std::vector<Placement>& objects, bool floor);

}  // namespace cg3d
