#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cg3d/geometry/point_cloud.hpp"

namespace cg3d {

// Procedural object classes, in canonical order.
std::span<const std::string_view> shape_classes();
bool is_shape_class(std::string_view name);

// Samples n_points near-uniformly (by surface area) on a randomly
// proportioned instance of the class, then normalizes to the unit sphere.
// The up axis is +z. Throws ConfigError for unknown classes or n < 16.
PointCloud generate_shape(std::string_view class_name, int n_points, Rng& rng);

}  // namespace cg3d
