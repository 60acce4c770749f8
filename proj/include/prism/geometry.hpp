#pragma once

#include <Eigen/Geometry>

#include <optional>
#include <variant>

namespace prism {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

/// Rigid transform. Applies rotation then translation: x -> q * x + t.
struct Pose {
  Vec3 t = Vec3::Zero();
  Quat q = Quat::Identity();

  static Pose identity() { return {}; }
  static Pose translation(double x, double y, double z) { return {Vec3(x, y, z), Quat::Identity()}; }
  static Pose from_yaw(const Vec3& t, double yaw);

  Vec3 apply(const Vec3& p) const { return q * p + t; }
  Vec3 apply_inverse(const Vec3& p) const { return q.conjugate() * (p - t); }
};

/// Normalizes and fixes the sign: w >= 0, ties broken by first nonzero of (x, y, z) positive.
Quat canonical(const Quat& q);

/// compose(a, b) applies b first, then a.
Pose compose(const Pose& a, const Pose& b);
Pose invert(const Pose& p);

/// Rotation about world z, in radians, of the quaternion's heading.
double yaw_of(const Quat& q);

/// 1 - |<a, b>|, zero iff equal up to sign.
double quat_distance(const Quat& a, const Quat& b);

struct Box {
  Vec3 half_extents;
};
struct Sphere {
  double radius;
};
/// Axis along local z.
struct Cylinder {
  double radius;
  double half_height;
};

using Shape = std::variant<Box, Sphere, Cylinder>;

bool shape_valid(const Shape& s);

/// Max of <d, x> over the shape's local points.
double local_support(const Shape& s, const Vec3& d);

/// Max of <d, x> over the posed shape, d in world frame.
double support(const Shape& s, const Pose& pose, const Vec3& d);

/// Height of the origin above the table when resting with the given orientation.
double resting_offset(const Shape& s, const Quat& q);

bool contains_local(const Shape& s, const Vec3& p);

/// Exact signed distance in the shape's local frame.
double signed_distance_local(const Shape& s, const Vec3& p);

struct RayHit {
  double t_in;
  double t_out;
};

/// Entry/exit parameters of o + t d against the shape in its local frame, if any (t may be negative).
std::optional<RayHit> intersect_local(const Shape& s, const Vec3& o, const Vec3& d);

/// Same as intersect_local but with o, d in world frame.
std::optional<RayHit> intersect(const Shape& s, const Pose& pose, const Vec3& o, const Vec3& d);

}  // namespace prism
