#pragma once

#include "prism/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prism {

/// Pinhole camera. Camera frame: x right, y down, z forward. Pixel (u, v) centers sit at integer coordinates.
struct Camera {
  std::string name;
  Pose pose;  // camera-to-world
  double focal = 64.0;
  Vec2 principal = Vec2(31.5, 31.5);
  int width = 64;
  int height = 64;
  double near = 0.05;
  double far = 3.0;

  bool valid() const;
  /// Unnormalized world-space direction through pixel (u, v) whose camera-frame z component is 1,
  /// so the ray parameter equals depth.
  Vec3 pixel_ray(double u, double v) const;
};

/// Camera at `eye` looking at `target`; `up` is the world direction that should appear upward in the image.
Camera look_at(std::string name, const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

struct Projection {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool behind = true;
};

Projection project(const Camera& cam, const Vec3& world_point);

struct RenderItem {
  int id;
  Shape shape;
  Pose pose;
};

struct IdDepthImage {
  int width = 0;
  int height = 0;
  double near = 0.0;
  double far = 0.0;
  std::vector<std::uint32_t> ids;  // row-major, 0 = background
  std::vector<double> depth;       // = far where background

  std::uint32_t id_at(int u, int v) const { return ids[static_cast<std::size_t>(v) * width + u]; }
  double depth_at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
};

struct PixelSample {
  std::uint32_t id;
  double depth;
};
/// Nearest hit at or beyond the near plane along one pixel ray; (0, far) when nothing is hit.
PixelSample trace_pixel(std::span<const RenderItem> items, const Camera& cam, int u, int v);

/// Per-pixel ray casting against analytic primitives; OpenMP over rows.
IdDepthImage rasterize(std::span<const RenderItem> items, const Camera& cam);

/// Single-threaded reference for rasterize; results are bit-identical.
IdDepthImage rasterize_serial(std::span<const RenderItem> items, const Camera& cam);

/// Depth as 8-bit PGM scaled near..far, ids as a hashed-color PPM.
void write_depth_pgm(const IdDepthImage& img, const std::filesystem::path& path);
void write_id_ppm(const IdDepthImage& img, const std::filesystem::path& path);

}  // namespace prism
