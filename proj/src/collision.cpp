#include "prism/collision.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace prism {

namespace {

double overlap_along(const Shape& a, const Pose& pa, const Shape& b, const Pose& pb, const Vec3& n) {
  const double a_hi = support(a, pa, n), a_lo = -support(a, pa, -n);
  const double b_hi = support(b, pb, n), b_lo = -support(b, pb, -n);
  return std::min(a_hi, b_hi) - std::max(a_lo, b_lo);
}

const std::vector<Vec3>& sphere_directions() {
  static const std::vector<Vec3> dirs = [] {
    // Fibonacci lattice over the upper hemisphere (antipodes are redundant for interval overlap).
    constexpr int n = 96;
    std::vector<Vec3> out;
    out.reserve(n);
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
      const double z = 1.0 - (i + 0.5) / n;
      const double r = std::sqrt(1.0 - z * z);
      out.emplace_back(r * std::cos(golden * i), r * std::sin(golden * i), z);
    }
    return out;
  }();
  return dirs;
}

double sphere_vs(const Sphere& s, const Vec3& center, const Shape& other, const Pose& po) {
  const double sd = signed_distance_local(other, po.apply_inverse(center));
  return std::max(0.0, s.radius - sd);
}

double box_box(const Box& a, const Pose& pa, const Box& b, const Pose& pb) {
  const Eigen::Matrix3d ra = pa.q.toRotationMatrix();
  const Eigen::Matrix3d rb = pb.q.toRotationMatrix();
  std::array<Vec3, 15> axes;
  int n = 0;
  for (int i = 0; i < 3; ++i) axes[n++] = ra.col(i);
  for (int i = 0; i < 3; ++i) axes[n++] = rb.col(i);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const Vec3 c = ra.col(i).cross(rb.col(j));
      if (c.norm() > 1e-9) axes[n++] = c.normalized();
    }
  }
  double best = std::numeric_limits<double>::infinity();
  const Shape sa = a, sb = b;
  for (int k = 0; k < n; ++k) {
    const double o = overlap_along(sa, pa, sb, pb, axes[k]);
    if (o <= 0.0) return 0.0;
    best = std::min(best, o);
  }
  return best;
}

Vec3 axis_of(const Shape& s, const Pose& p) {
  if (std::holds_alternative<Cylinder>(s)) return p.q * Vec3::UnitZ();
  return Vec3::Zero();
}

double generic_sat(const Shape& a, const Pose& pa, const Shape& b, const Pose& pb) {
  std::vector<Vec3> axes;
  axes.reserve(160);
  auto push = [&axes](const Vec3& v) {
    const double n = v.norm();
    if (n > 1e-9) axes.push_back(v / n);
  };
  const Eigen::Matrix3d ra = pa.q.toRotationMatrix();
  const Eigen::Matrix3d rb = pb.q.toRotationMatrix();
  for (int i = 0; i < 3; ++i) {
    push(ra.col(i));
    push(rb.col(i));
  }
  const Vec3 center = pb.t - pa.t;
  push(center);
  for (const auto& [s, p, other, po] : {std::tuple{&a, &pa, &b, &pb}, std::tuple{&b, &pb, &a, &pa}}) {
    const Vec3 ax = axis_of(*s, *p);
    if (ax.isZero()) continue;
    // Radial direction from this cylinder's axis toward the other body's closest point.
    const Vec3 c = closest_point(*other, *po, p->t);
    const Vec3 off = c - p->t;
    push(off - ax * ax.dot(off));
    const Vec3 cc = po->t - p->t;
    push(cc - ax * ax.dot(cc));
    for (int i = 0; i < 3; ++i) push(ax.cross((s == &a ? rb : ra).col(i)));
  }
  for (const auto& d : sphere_directions()) axes.push_back(d);

  double best = std::numeric_limits<double>::infinity();
  for (const auto& n : axes) {
    const double o = overlap_along(a, pa, b, pb, n);
    if (o <= 0.0) return 0.0;
    best = std::min(best, o);
  }
  return best;
}

}  // namespace

Vec3 closest_point(const Shape& s, const Pose& pose, const Vec3& p) {
  const Vec3 l = pose.apply_inverse(p);
  Vec3 c;
  if (const auto* b = std::get_if<Box>(&s)) {
    c = l.cwiseMax(-b->half_extents).cwiseMin(b->half_extents);
  } else if (const auto* sp = std::get_if<Sphere>(&s)) {
    const double n = l.norm();
    c = n <= sp->radius ? l : Vec3(l * (sp->radius / n));
  } else {
    const auto& cy = std::get<Cylinder>(s);
    const double r = std::hypot(l.x(), l.y());
    c = l;
    if (r > cy.radius) {
      c.x() *= cy.radius / r;
      c.y() *= cy.radius / r;
    }
    c.z() = std::clamp(l.z(), -cy.half_height, cy.half_height);
  }
  return pose.apply(c);
}

double penetration(const Shape& a, const Pose& pa, const Shape& b, const Pose& pb) {
  // Broad phase on bounding spheres.
  const double ra = local_support(a, Vec3::UnitX()) + local_support(a, Vec3::UnitY()) + local_support(a, Vec3::UnitZ());
  const double rb = local_support(b, Vec3::UnitX()) + local_support(b, Vec3::UnitY()) + local_support(b, Vec3::UnitZ());
  if ((pa.t - pb.t).norm() > ra + rb) return 0.0;

  const auto* sa = std::get_if<Sphere>(&a);
  const auto* sb = std::get_if<Sphere>(&b);
  if (sa && sb) return std::max(0.0, sa->radius + sb->radius - (pa.t - pb.t).norm());
  if (sa) return sphere_vs(*sa, pa.t, b, pb);
  if (sb) return sphere_vs(*sb, pb.t, a, pa);
  const auto* ba = std::get_if<Box>(&a);
  const auto* bb = std::get_if<Box>(&b);
  if (ba && bb) return box_box(*ba, pa, *bb, pb);
  return generic_sat(a, pa, b, pb);
}

}  // namespace prism
