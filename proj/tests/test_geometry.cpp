#include "oracles.hpp"

#include "prism/collision.hpp"
#include "prism/geometry.hpp"
#include "prism/raster.hpp"
#include "prism/rng.hpp"

#include <doctest.h>

using namespace prism;

TEST_CASE("canonical quaternion sign") {
  const Quat q(-0.5, 0.5, -0.5, 0.5);
  const Quat c = canonical(q);
  CHECK(c.w() > 0.0);
  CHECK(quat_distance(q, c) == doctest::Approx(0.0).epsilon(1e-12));
  const Quat tie = canonical(Quat(0.0, -1.0, 0.0, 0.0));
  CHECK(tie.x() == doctest::Approx(1.0));
}

TEST_CASE("compose and invert round trip") {
  Rng rng = make_rng(1, "pose");
  for (int i = 0; i < 50; ++i) {
    Pose a;
    a.t = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    a.q = Quat(Eigen::AngleAxisd(uniform(rng, -3, 3), Vec3(0.3, -0.2, 0.9).normalized()));
    const Vec3 p(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    const Pose id = compose(a, invert(a));
    CHECK((id.apply(p) - p).norm() < 1e-12);
    CHECK((a.apply_inverse(a.apply(p)) - p).norm() < 1e-12);
  }
  CHECK(yaw_of(Pose::from_yaw(Vec3::Zero(), 0.7).q) == doctest::Approx(0.7));
}

TEST_CASE("signed distance agrees with containment and support") {
  Rng rng = make_rng(2, "sdf");
  const Shape shapes[] = {Box{Vec3(0.03, 0.05, 0.02)}, Sphere{0.04}, Cylinder{0.03, 0.05}};
  for (const auto& s : shapes) {
    for (int i = 0; i < 2000; ++i) {
      const Vec3 p(uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1));
      const double d = signed_distance_local(s, p);
      if (std::abs(d) > 1e-9) CHECK((d < 0) == contains_local(s, p));
      const Vec3 dir = p.normalized();
      CHECK(dir.dot(p) <= local_support(s, dir) + std::max(0.0, d) + 1e-12);
    }
  }
  CHECK(resting_offset(Box{Vec3(0.1, 0.2, 0.03)}, Quat::Identity()) == doctest::Approx(0.03));
  CHECK(resting_offset(Cylinder{0.03, 0.07}, Quat::Identity()) == doctest::Approx(0.07));
}

TEST_CASE("ray intersection matches sphere tracing") {
  Rng rng = make_rng(3, "ray");
  for (int i = 0; i < 300; ++i) {
    auto items = oracle_ref::random_items(rng, 1);
    const Vec3 o(uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6), uniform(rng, 0.3, 0.6));
    const Vec3 target = items[0].pose.t + Vec3(uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), 0.0);
    const Vec3 d = (target - o).normalized();
    const auto hit = intersect(items[0].shape, items[0].pose, o, d);
    const double ref = oracle_ref::march(items[0], o, d, 0.0, 5.0, true);
    if (oracle_ref::sdf_world(items[0], o) <= 0.0) continue;
    if (std::isinf(ref)) {
      CHECK((!hit || hit->t_in < 0.0 || std::abs(hit->t_out - hit->t_in) < 1e-6));
    } else {
      REQUIRE(hit);
      CHECK(hit->t_in == doctest::Approx(ref).epsilon(1e-7));
    }
  }
}

TEST_CASE("projection of pixel ray points") {
  const Camera cam = look_at("c", Vec3(0.5, 0.1, 0.4), Vec3(0, 0, 0.05));
  REQUIRE(cam.valid());
  for (int u : {0, 17, 31, 63}) {
    for (int v : {0, 40, 63}) {
      const Vec3 p = cam.pose.t + 0.7 * cam.pixel_ray(u, v);
      const auto pr = project(cam, p);
      CHECK_FALSE(pr.behind);
      CHECK(pr.pixel.x() == doctest::Approx(u));
      CHECK(pr.pixel.y() == doctest::Approx(v));
      CHECK(pr.depth == doctest::Approx(0.7));
    }
  }
  // Up vector appears upward: a point above the target projects to a smaller row.
  CHECK(project(cam, Vec3(0, 0, 0.15)).pixel.y() < project(cam, Vec3(0, 0, 0.05)).pixel.y());
  CHECK(project(cam, cam.pose.t - (cam.pose.q * Vec3::UnitZ())).behind);
}

TEST_CASE("rasterizer matches brute force and serial reference") {
  Rng rng = make_rng(4, "raster");
  const Camera cam = look_at("c", Vec3(0.45, -0.2, 0.35), Vec3(0, 0, 0.08));
  for (int s = 0; s < 5; ++s) {
    const auto items = oracle_ref::random_items(rng, 5);
    const auto img = rasterize(items, cam);
    const auto ser = rasterize_serial(items, cam);
    CHECK(img.ids == ser.ids);
    CHECK(img.depth == ser.depth);
    int mismatches = 0;
    for (int v = 0; v < cam.height; ++v) {
      for (int u = 0; u < cam.width; ++u) {
        const auto ref = oracle_ref::brute_pixel(items, cam, u, v);
        if (ref.id != img.id_at(u, v) || std::abs(ref.depth - img.depth_at(u, v)) > 1e-6) ++mismatches;
      }
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("near plane inside object reports exit depth") {
  Camera cam = look_at("c", Vec3(0, 0, 1.0), Vec3(0, 0, 0), Vec3::UnitX());
  const std::vector<RenderItem> items{{7, Sphere{0.98}, Pose::identity()}};
  const auto s = trace_pixel(items, cam, 31, 31);
  const auto ref = oracle_ref::brute_pixel(items, cam, 31, 31);
  CHECK(s.id == 7u);
  CHECK(ref.id == 7u);
  CHECK(s.depth > 1.9);
  CHECK(s.depth == doctest::Approx(ref.depth).epsilon(1e-9));
}

TEST_CASE("penetration: sphere pairs exact, separated shapes zero") {
  CHECK(penetration(Sphere{0.05}, Pose::translation(0, 0, 0), Sphere{0.05}, Pose::translation(0.08, 0, 0)) ==
        doctest::Approx(0.02));
  CHECK(penetration(Box{Vec3(0.05, 0.05, 0.05)}, Pose::identity(), Box{Vec3(0.05, 0.05, 0.05)},
                    Pose::translation(0.09, 0, 0)) == doctest::Approx(0.01));
  CHECK(penetration(Box{Vec3(0.05, 0.05, 0.05)}, Pose::identity(), Box{Vec3(0.05, 0.05, 0.05)},
                    Pose::translation(0.11, 0, 0)) == 0.0);
  // Flat stacked cans touch without penetrating.
  CHECK(penetration(Cylinder{0.033, 0.03}, Pose::translation(0, 0, 0.03), Cylinder{0.033, 0.03},
                    Pose::translation(0.01, 0, 0.09)) < 1e-9);
  CHECK(penetration(Cylinder{0.033, 0.03}, Pose::translation(0, 0, 0.03), Cylinder{0.033, 0.03},
                    Pose::translation(0.01, 0, 0.085)) == doctest::Approx(0.005).epsilon(1e-6));
}

TEST_CASE("penetration sign agrees with Monte-Carlo overlap") {
  Rng rng = make_rng(5, "mc");
  int disagreements = 0;
  for (int i = 0; i < 200; ++i) {
    auto items = oracle_ref::random_items(rng, 2);
    if (items.size() < 2) continue;
    items[1].pose.t = items[0].pose.t + Vec3(uniform(rng, -0.12, 0.12), uniform(rng, -0.12, 0.12), uniform(rng, -0.12, 0.12));
    const double d = penetration(items[0].shape, items[0].pose, items[1].shape, items[1].pose);
    const bool mc = oracle_ref::mc_overlap(items[0].shape, items[0].pose, items[1].shape, items[1].pose, rng, 200000);
    // MC can miss slivers; a reported overlap of > 5 mm must be visible, and any MC hit must be reported.
    if (mc && d <= 0.0) ++disagreements;
    if (!mc && d > 0.005) ++disagreements;
  }
  CHECK(disagreements == 0);
}
