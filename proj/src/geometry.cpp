#include "prism/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace prism {

Pose Pose::from_yaw(const Vec3& t, double yaw) {
  return {t, canonical(Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())))};
}

Quat canonical(const Quat& in) {
  Quat q = in.normalized();
  auto flip = [&q] { q.coeffs() = -q.coeffs(); };
  if (q.w() < 0.0) {
    flip();
  } else if (q.w() == 0.0) {
    for (double c : {q.x(), q.y(), q.z()}) {
      if (c != 0.0) {
        if (c < 0.0) flip();
        break;
      }
    }
  }
  return q;
}

Pose compose(const Pose& a, const Pose& b) {
  return {a.q * b.t + a.t, canonical(a.q * b.q)};
}

Pose invert(const Pose& p) {
  const Quat qi = p.q.conjugate();
  return {-(qi * p.t), canonical(qi)};
}

double yaw_of(const Quat& q) {
  const Vec3 x = q * Vec3::UnitX();
  return std::atan2(x.y(), x.x());
}

double quat_distance(const Quat& a, const Quat& b) {
  return 1.0 - std::abs(a.coeffs().dot(b.coeffs()));
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr double kInf = std::numeric_limits<double>::infinity();

std::optional<RayHit> slab(const Vec3& half, const Vec3& o, const Vec3& d) {
  double t0 = -kInf, t1 = kInf;
  for (int i = 0; i < 3; ++i) {
    if (d[i] == 0.0) {
      if (std::abs(o[i]) > half[i]) return std::nullopt;
      continue;
    }
    double a = (-half[i] - o[i]) / d[i];
    double b = (half[i] - o[i]) / d[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::nullopt;
  }
  return RayHit{t0, t1};
}

std::optional<RayHit> ray_sphere(double r, const Vec3& o, const Vec3& d) {
  const double a = d.squaredNorm();
  const double b = o.dot(d);
  const double c = o.squaredNorm() - r * r;
  const double disc = b * b - a * c;
  if (disc < 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  // Numerically stable root pair.
  const double qv = -(b + std::copysign(s, b));
  double t0, t1;
  if (qv == 0.0) {
    t0 = t1 = 0.0;
  } else {
    t0 = qv / a;
    t1 = c / qv;
  }
  if (t0 > t1) std::swap(t0, t1);
  return RayHit{t0, t1};
}

std::optional<RayHit> ray_cylinder(const Cylinder& cyl, const Vec3& o, const Vec3& d) {
  double t0 = -kInf, t1 = kInf;
  // Lateral surface.
  const double a = d.x() * d.x() + d.y() * d.y();
  const double c = o.x() * o.x() + o.y() * o.y() - cyl.radius * cyl.radius;
  if (a == 0.0) {
    if (c > 0.0) return std::nullopt;
  } else {
    const double b = o.x() * d.x() + o.y() * d.y();
    const double disc = b * b - a * c;
    if (disc < 0.0) return std::nullopt;
    const double s = std::sqrt(disc);
    const double qv = -(b + std::copysign(s, b));
    double r0, r1;
    if (qv == 0.0) {
      r0 = r1 = 0.0;
    } else {
      r0 = qv / a;
      r1 = c / qv;
    }
    if (r0 > r1) std::swap(r0, r1);
    t0 = r0;
    t1 = r1;
  }
  // Caps.
  if (d.z() == 0.0) {
    if (std::abs(o.z()) > cyl.half_height) return std::nullopt;
  } else {
    double za = (-cyl.half_height - o.z()) / d.z();
    double zb = (cyl.half_height - o.z()) / d.z();
    if (za > zb) std::swap(za, zb);
    t0 = std::max(t0, za);
    t1 = std::min(t1, zb);
  }
  if (t0 > t1) return std::nullopt;
  return RayHit{t0, t1};
}

}  // namespace

bool shape_valid(const Shape& s) {
  return std::visit(overloaded{
                        [](const Box& b) { return (b.half_extents.array() > 0.0).all(); },
                        [](const Sphere& sp) { return sp.radius > 0.0; },
                        [](const Cylinder& c) { return c.radius > 0.0 && c.half_height > 0.0; },
                    },
                    s);
}

double local_support(const Shape& s, const Vec3& d) {
  return std::visit(overloaded{
                        [&](const Box& b) { return b.half_extents.dot(d.cwiseAbs()); },
                        [&](const Sphere& sp) { return sp.radius * d.norm(); },
                        [&](const Cylinder& c) {
                          return c.radius * std::hypot(d.x(), d.y()) + c.half_height * std::abs(d.z());
                        },
                    },
                    s);
}

double support(const Shape& s, const Pose& pose, const Vec3& d) {
  return local_support(s, pose.q.conjugate() * d) + d.dot(pose.t);
}

double resting_offset(const Shape& s, const Quat& q) {
  return local_support(s, q.conjugate() * Vec3(0.0, 0.0, -1.0));
}

bool contains_local(const Shape& s, const Vec3& p) {
  return std::visit(overloaded{
                        [&](const Box& b) { return (p.cwiseAbs().array() <= b.half_extents.array()).all(); },
                        [&](const Sphere& sp) { return p.squaredNorm() <= sp.radius * sp.radius; },
                        [&](const Cylinder& c) {
                          return std::abs(p.z()) <= c.half_height &&
                                 p.x() * p.x() + p.y() * p.y() <= c.radius * c.radius;
                        },
                    },
                    s);
}

double signed_distance_local(const Shape& s, const Vec3& p) {
  return std::visit(overloaded{
                        [&](const Box& b) {
                          const Vec3 q = p.cwiseAbs() - b.half_extents;
                          return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
                        },
                        [&](const Sphere& sp) { return p.norm() - sp.radius; },
                        [&](const Cylinder& c) {
                          const Vec2 q(std::hypot(p.x(), p.y()) - c.radius, std::abs(p.z()) - c.half_height);
                          return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
                        },
                    },
                    s);
}

std::optional<RayHit> intersect_local(const Shape& s, const Vec3& o, const Vec3& d) {
  return std::visit(overloaded{
                        [&](const Box& b) { return slab(b.half_extents, o, d); },
                        [&](const Sphere& sp) { return ray_sphere(sp.radius, o, d); },
                        [&](const Cylinder& c) { return ray_cylinder(c, o, d); },
                    },
                    s);
}

std::optional<RayHit> intersect(const Shape& s, const Pose& pose, const Vec3& o, const Vec3& d) {
  const Quat qi = pose.q.conjugate();
  return intersect_local(s, qi * (o - pose.t), qi * d);
}

}  // namespace prism
