#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "cg3d/geometry/point_cloud.hpp"

namespace cg3d {

// Orthographic camera: points are rotated, scaled, and dropped onto the xy
// plane; the camera sits at +z looking down -z.
struct ViewPose {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  double scale = 1.0;

  static ViewPose identity() { return {}; }
  // Side view: azimuth uniform about the vertical axis, elevation uniform in
  // [-max_elevation_deg, max_elevation_deg] so the object's up axis maps to
  // image rows.
  static ViewPose random(Rng& rng, double max_elevation_deg = 30.0);
  static ViewPose side(double azimuth_rad, double elevation_rad);

  Vec3 apply(Vec3 p) const;
  // Throws ContractError unless R R^T = I within 1e-6 and scale > 0.
  void validate() const;
};

struct DepthImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // row-major, 0 = background, (0,1] occupied
  ViewPose view;

  float at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

// Nearest point wins per pixel; value is 1 - normalized depth.
DepthImage project_depth(const PointCloud& pc, const ViewPose& pose, int height, int width);

// Dense stand-in for a shaded rendering: every point is splatted over a
// (2r+1)^2 footprint (nearest wins) and shaded 0.35 + 0.65 * (1 - depth).
DepthImage render_splat(const PointCloud& pc, const ViewPose& pose, int height, int width, int radius = 1);

enum class ImageMode { depth, render };
std::string to_string(ImageMode m);
ImageMode image_mode_from_string(const std::string& s);

DepthImage make_image(ImageMode mode, const PointCloud& pc, const ViewPose& pose, int height, int width);

// Binary grid: "DPTH" | u32 H | u32 W | H*W float32, little-endian.
std::vector<char> encode_depth_image(const DepthImage& img);
DepthImage decode_depth_image(std::span<const char> bytes);
void write_depth_image(const std::string& path, const DepthImage& img);
DepthImage read_depth_image(const std::string& path);

}  // namespace cg3d
