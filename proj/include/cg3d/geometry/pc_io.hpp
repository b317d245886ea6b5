#pragma once

#include <span>
#include <string>
#include <vector>

#include "cg3d/geometry/point_cloud.hpp"

namespace cg3d {

// Binary: "PCLD" | u32 version=1 | u32 N | N*3 float32, little-endian.
std::vector<char> encode_point_cloud(const PointCloud& pc);
PointCloud decode_point_cloud(std::span<const char> bytes);

// ASCII ".xyz": one "x y z" triple per line; blank lines and '#' comments
// are skipped.
std::string format_xyz(const PointCloud& pc);
PointCloud parse_xyz(std::string_view text);

// Binary when the payload starts with the binary magic, otherwise ".xyz".
PointCloud parse_point_cloud(std::span<const char> bytes);

// Format chosen by extension: ".xyz" is text, anything else binary.
void write_point_cloud(const std::string& path, const PointCloud& pc);
PointCloud read_point_cloud(const std::string& path);

}  // namespace cg3d
