#include "cg3d/geometry/pc_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "cg3d/util/binary_io.hpp"
#include "cg3d/util/error.hpp"

namespace cg3d {

std::vector<char> encode_point_cloud(const PointCloud& pc) {
  validate(pc);
  io::ByteWriter w;
  w.magic("PCLD");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(pc.points.size()));
  for (const Vec3& p : pc.points) {
    w.f32(static_cast<float>(p.x));
    w.f32(static_cast<float>(p.y));
    w.f32(static_cast<float>(p.z));
  }
  return w.take();
}

PointCloud decode_point_cloud(std::span<const char> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("PCLD", "point cloud");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("point cloud version");
  if (version != 1) throw FormatError("point cloud: unsupported version " + std::to_string(version), version_at);
  const std::size_t count_at = r.offset();
  const std::uint32_t n = r.u32("point cloud count");
  if (n == 0) throw FormatError("point cloud: zero points", count_at);
  if (r.remaining() < static_cast<std::size_t>(n) * 12)
    throw FormatError("point cloud: truncated, " + std::to_string(n) + " points declared", r.offset());
  PointCloud pc;
  pc.points.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t at = r.offset();
    const float x = r.f32("x"), y = r.f32("y"), z = r.f32("z");
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
      throw FormatError("point cloud: non-finite coordinate in point " + std::to_string(i), at);
    pc.points.push_back({x, y, z});
  }
  return pc;
}

std::string format_xyz(const PointCloud& pc) {
  validate(pc);
  std::string out;
  char buf[96];
  for (const Vec3& p : pc.points) {
    const int n = std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p.x, p.y, p.z);
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

PointCloud parse_xyz(std::string_view text) {
  PointCloud pc;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = text.substr(pos, eol - pos);
    std::size_t i = 0;
    auto skip_ws = [&] {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == ',')) ++i;
    };
    skip_ws();
    if (i < line.size() && line[i] != '#') {
      double v[3];
      for (int k = 0; k < 3; ++k) {
        skip_ws();
        const char* first = line.data() + i;
        const auto [ptr, ec] = std::from_chars(first, line.data() + line.size(), v[k]);
        if (ec != std::errc() || !std::isfinite(v[k]))
          throw FormatError("xyz: expected a finite number", pos + i);
        i += static_cast<std::size_t>(ptr - first);
      }
      skip_ws();
      if (i < line.size()) throw FormatError("xyz: trailing characters on line", pos + i);
      pc.points.push_back({v[0], v[1], v[2]});
    }
    pos = eol + 1;
  }
  if (pc.points.empty()) throw FormatError("xyz: no points", text.size());
  return pc;
}

PointCloud parse_point_cloud(std::span<const char> bytes) {
  if (bytes.size() >= 4 && std::string_view(bytes.data(), 4) == "PCLD") return decode_point_cloud(bytes);
  return parse_xyz(std::string_view(bytes.data(), bytes.size()));
}

namespace {
bool is_xyz(const std::string& path) { return path.size() >= 4 && path.compare(path.size() - 4, 4, ".xyz") == 0; }
}  // namespace

void write_point_cloud(const std::string& path, const PointCloud& pc) {
  if (is_xyz(path))
    io::write_text_file(path, format_xyz(pc));
  else
    io::write_file(path, encode_point_cloud(pc));
}

PointCloud read_point_cloud(const std::string& path) {
  if (is_xyz(path)) return parse_xyz(io::read_text_file(path));
  const auto bytes = io::read_file(path);
  return decode_point_cloud(bytes);
}

}  // namespace cg3d
