#pragma once

#include "prism/geometry.hpp"

namespace prism {

/// Penetration depth between two posed primitives; 0 when separated or touching.
///
/// Sphere-sphere and sphere-box/cylinder pairs are exact. Box-box uses the 15 separating axes.
/// Pairs involving a cylinder (other than with a sphere) use the minimum support-interval overlap
/// over face normals, cylinder axes, radial center directions, cross products and a fixed
/// direction set; separation along any tested axis yields 0.
double penetration(const Shape& a, const Pose& pa, const Shape& b, const Pose& pb);

/// Closest point of a posed shape to p (p itself when inside).
Vec3 closest_point(const Shape& s, const Pose& pose, const Vec3& p);

}  // namespace prism
