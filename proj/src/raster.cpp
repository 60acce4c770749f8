#include "prism/raster.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace prism {

bool Camera::valid() const {
  return focal > 0.0 && near > 0.0 && near < far && width >= 8 && height >= 8;
}

Vec3 Camera::pixel_ray(double u, double v) const {
  const Vec3 d_cam((u - principal.x()) / focal, (v - principal.y()) / focal, 1.0);
  return pose.q * d_cam;
}

Camera look_at(std::string name, const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) x = z.cross(Vec3::UnitY());
  x.normalize();
  const Vec3 y = z.cross(x);  // points down in the image
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  Camera cam;
  cam.name = std::move(name);
  cam.pose = Pose{eye, canonical(Quat(r))};
  return cam;
}

Projection project(const Camera& cam, const Vec3& world_point) {
  const Vec3 pc = cam.pose.apply_inverse(world_point);
  Projection out;
  out.depth = pc.z();
  if (pc.z() <= cam.near) return out;
  out.behind = false;
  out.pixel = Vec2(cam.focal * pc.x() / pc.z() + cam.principal.x(), cam.focal * pc.y() / pc.z() + cam.principal.y());
  return out;
}

PixelSample trace_pixel(std::span<const RenderItem> items, const Camera& cam, int u, int v) {
  const Vec3 o = cam.pose.t;
  const Vec3 d = cam.pixel_ray(u, v);
  PixelSample best{0, cam.far};
  for (const auto& item : items) {
    const auto hit = intersect(item.shape, item.pose, o, d);
    if (!hit) continue;
    double t = hit->t_in;
    if (t < cam.near) t = hit->t_out;  // clipped by the near plane: see the interior exit
    if (t < cam.near || t >= cam.far) continue;
    if (t < best.depth || (t == best.depth && best.id != 0 && static_cast<std::uint32_t>(item.id) < best.id)) {
      best = {static_cast<std::uint32_t>(item.id), t};
    }
  }
  return best;
}

namespace {

IdDepthImage blank(const Camera& cam) {
  if (!cam.valid()) throw std::invalid_argument("invalid camera '" + cam.name + "'");
  IdDepthImage img;
  img.width = cam.width;
  img.height = cam.height;
  img.near = cam.near;
  img.far = cam.far;
  const auto n = static_cast<std::size_t>(cam.width) * cam.height;
  img.ids.assign(n, 0);
  img.depth.assign(n, cam.far);
  return img;
}

}  // namespace

IdDepthImage rasterize(std::span<const RenderItem> items, const Camera& cam) {
  IdDepthImage img = blank(cam);
  if (items.empty()) return img;
#pragma omp parallel for schedule(static)
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const auto s = trace_pixel(items, cam, u, v);
      const auto k = static_cast<std::size_t>(v) * cam.width + u;
      img.ids[k] = s.id;
      img.depth[k] = s.depth;
    }
  }
  return img;
}

IdDepthImage rasterize_serial(std::span<const RenderItem> items, const Camera& cam) {
  IdDepthImage img = blank(cam);
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const auto s = trace_pixel(items, cam, u, v);
      const auto k = static_cast<std::size_t>(v) * cam.width + u;
      img.ids[k] = s.id;
      img.depth[k] = s.depth;
    }
  }
  return img;
}

void write_depth_pgm(const IdDepthImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (double d : img.depth) {
    const double s = std::clamp((d - img.near) / (img.far - img.near), 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(255.0 * (1.0 - s) + 0.5)));
  }
}

void write_id_ppm(const IdDepthImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (auto id : img.ids) {
    std::uint32_t h = id == 0 ? 0u : id * 2654435761u;
    out.put(static_cast<char>(h >> 24));
    out.put(static_cast<char>(h >> 16));
    out.put(static_cast<char>(h >> 8));
  }
}

}  // namespace prism
