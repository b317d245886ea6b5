#include "cg3d/geometry/depth.hpp"

#include <algorithm>
#include <cmath>

#include "cg3d/util/binary_io.hpp"
#include "cg3d/util/error.hpp"

namespace cg3d {

namespace {

constexpr double kPi = 3.141592653589793;
constexpr float kMinOccupied = 1e-6f;

std::array<double, 9> matmul3(const std::array<double, 9>& a, const std::array<double, 9>& b) {
  std::array<double, 9> c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

int to_pixel(double u, int n) {
  const int p = static_cast<int>(std::floor((u + 1.0) * 0.5 * n));
  return std::clamp(p, 0, n - 1);
}

// Shared z-buffer pass. `shade` maps the clamped depth in [0,1) to a value.
template <typename Shade>
DepthImage rasterize(const PointCloud& pc, const ViewPose& pose, int height, int width, int radius, Shade shade) {
  validate(pc);
  pose.validate();
  if (height < 8 || width < 8) throw ConfigError("image size must be at least 8x8");
  DepthImage img;
  img.height = height;
  img.width = width;
  img.view = pose;
  img.pixels.assign(static_cast<std::size_t>(height) * width, 0.0f);
  std::vector<double> zbuf(img.pixels.size(), 2.0);
  for (const Vec3& p : pc.points) {
    const Vec3 q = pose.apply(p);
    const int col = to_pixel(q.x, width);
    const int row = to_pixel(-q.y, height);  // +y is up
    const double depth = std::clamp((1.0 - q.z) * 0.5, 0.0, 1.0);
    for (int dr = -radius; dr <= radius; ++dr) {
      for (int dc = -radius; dc <= radius; ++dc) {
        const int r = row + dr, c = col + dc;
        if (r < 0 || r >= height || c < 0 || c >= width) continue;
        const std::size_t k = static_cast<std::size_t>(r) * width + c;
        if (depth < zbuf[k]) {
          zbuf[k] = depth;
          img.pixels[k] = std::max(kMinOccupied, static_cast<float>(shade(depth)));
        }
      }
    }
  }
  return img;
}

}  // namespace

ViewPose ViewPose::side(double azimuth, double elevation) {
  const double ca = std::cos(azimuth), sa = std::sin(azimuth);
  const std::array<double, 9> rz{ca, -sa, 0, sa, ca, 0, 0, 0, 1};
  // Tilt the vertical axis onto image +y, then add elevation.
  const double t = -kPi / 2 + elevation;
  const double ct = std::cos(t), st = std::sin(t);
  const std::array<double, 9> rx{1, 0, 0, 0, ct, -st, 0, st, ct};
  ViewPose v;
  v.rotation = matmul3(rx, rz);
  return v;
}

ViewPose ViewPose::random(Rng& rng, double max_elevation_deg) {
  const double az = uniform(rng, 0.0, 2 * kPi);
  const double el = uniform(rng, -1.0, 1.0) * max_elevation_deg * kPi / 180.0;
  return side(az, el);
}

Vec3 ViewPose::apply(Vec3 p) const {
  const auto& r = rotation;
  return {scale * (r[0] * p.x + r[1] * p.y + r[2] * p.z), scale * (r[3] * p.x + r[4] * p.y + r[5] * p.z),
          scale * (r[6] * p.x + r[7] * p.y + r[8] * p.z)};
}

void ViewPose::validate() const {
  if (!(scale > 0) || !std::isfinite(scale)) throw ContractError("view scale must be positive");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = 0;
      for (int k = 0; k < 3; ++k) d += rotation[i * 3 + k] * rotation[j * 3 + k];
      if (std::abs(d - (i == j ? 1.0 : 0.0)) > 1e-6) throw ContractError("view rotation is not orthonormal");
    }
}

DepthImage project_depth(const PointCloud& pc, const ViewPose& pose, int height, int width) {
  return rasterize(pc, pose, height, width, 0, [](double d) { return 1.0 - d; });
}

DepthImage render_splat(const PointCloud& pc, const ViewPose& pose, int height, int width, int radius) {
  if (radius < 0) throw ConfigError("splat radius must be >= 0");
  return rasterize(pc, pose, height, width, radius, [](double d) { return 0.35 + 0.65 * (1.0 - d); });
}

std::string to_string(ImageMode m) { return m == ImageMode::depth ? "depth" : "render"; }

ImageMode image_mode_from_string(const std::string& s) {
  if (s == "depth") return ImageMode::depth;
  if (s == "render") return ImageMode::render;
  throw ConfigError("unknown image_mode \"" + s + "\" (expected depth|render)");
}

DepthImage make_image(ImageMode mode, const PointCloud& pc, const ViewPose& pose, int height, int width) {
  return mode == ImageMode::depth ? project_depth(pc, pose, height, width) : render_splat(pc, pose, height, width);
}

std::vector<char> encode_depth_image(const DepthImage& img) {
  io::ByteWriter w;
  w.magic("DPTH");
  w.u32(static_cast<std::uint32_t>(img.height));
  w.u32(static_cast<std::uint32_t>(img.width));
  w.f32s(img.pixels);
  return w.take();
}

DepthImage decode_depth_image(std::span<const char> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("DPTH", "depth image");
  DepthImage img;
  img.height = static_cast<int>(r.u32("depth image height"));
  img.width = static_cast<int>(r.u32("depth image width"));
  if (img.height <= 0 || img.width <= 0) throw FormatError("depth image: zero dimension", r.offset());
  img.pixels.resize(static_cast<std::size_t>(img.height) * img.width);
  const std::size_t payload = r.offset();
  r.f32s(img.pixels, "depth image payload");
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    if (!std::isfinite(img.pixels[i])) throw FormatError("depth image: non-finite pixel", payload + 4 * i);
  return img;
}

void write_depth_image(const std::string& path, const DepthImage& img) { io::write_file(path, encode_depth_image(img)); }

DepthImage read_depth_image(const std::string& path) {
  const auto bytes = io::read_file(path);
  return decode_depth_image(bytes);
}

}  // namespace cg3d
