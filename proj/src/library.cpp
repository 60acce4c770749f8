#include "prism/library.hpp"

#include <stdexcept>

namespace prism {

namespace {

SceneObject make_object(int id, std::string name, Shape shape, double x, double y, double yaw) {
  SceneObject o;
  o.id = id;
  o.name = std::move(name);
  o.shape = shape;
  o.pose = Pose::from_yaw(Vec3(x, y, 0.0), yaw);
  o.refresh_support_height();
  o.pose.t.z() = o.support_height;
  return o;
}

}  // namespace

TaskScene make_task_scene(TaskFamily family, std::uint64_t seed, double jitter) {
  Rng rng = make_rng(seed, "task_scene");
  auto j = [&] { return uniform(rng, -jitter, jitter); };

  TaskScene ts;
  WorldState& w = ts.scene.world;
  w.table_height = 0.0;
  w.gripper.pose = Pose::translation(0.0, 0.0, 0.20);
  ts.task.family = family;

  switch (family) {
    case TaskFamily::lift: {
      w.objects.push_back(make_object(1, "banana", Box{Vec3(0.06, 0.02, 0.02)}, 0.06 + j(), -0.04 + j(), 0.3));
      w.objects.push_back(make_object(2, "mustard", Cylinder{0.03, 0.07}, -0.16 + j(), 0.16 + j(), 0.0));
      ts.task.target_ids = {1};
      ts.task.thresholds = {{"lift_height", 0.10}};
      break;
    }
    case TaskFamily::press: {
      auto button = make_object(1, "button", Box{Vec3(0.02, 0.02, 0.01)}, 0.05 + j(), 0.05 + j(), 0.0);
      button.graspable = false;
      button.press_travel = 0.008;
      w.objects.push_back(button);
      ts.task.target_ids = {1};
      ts.task.thresholds = {{"press_depth", 0.005}};
      break;
    }
    case TaskFamily::insert: {
      w.objects.push_back(make_object(1, "marker", Cylinder{0.008, 0.06}, -0.08 + j(), -0.06 + j(), 0.0));
      auto holder = make_object(2, "holder", Cylinder{0.03, 0.04}, 0.10 + j(), 0.08 + j(), 0.0);
      holder.container = true;
      holder.graspable = false;
      w.objects.push_back(holder);
      ts.task.target_ids = {1, 2};
      ts.task.thresholds = {{"insert_tolerance", 0.015}};
      break;
    }
    case TaskFamily::pick_place: {
      w.objects.push_back(make_object(1, "apple", Sphere{0.03}, -0.08 + j(), 0.08 + j(), 0.0));
      auto bowl = make_object(2, "bowl", Cylinder{0.07, 0.03}, 0.10 + j(), -0.06 + j(), 0.0);
      bowl.container = true;
      bowl.graspable = false;
      w.objects.push_back(bowl);
      ts.task.target_ids = {1, 2};
      ts.task.thresholds = {{"inside_fraction", 1.0}};
      break;
    }
    case TaskFamily::stack: {
      w.objects.push_back(make_object(1, "can_top", Cylinder{0.033, 0.06}, -0.10 + j(), 0.06 + j(), 0.0));
      w.objects.push_back(make_object(2, "can_base", Cylinder{0.033, 0.06}, 0.10 + j(), -0.06 + j(), 0.0));
      ts.task.target_ids = {1, 2};
      break;
    }
  }
  ts.scene.cameras = default_cameras();
  w = settle(w);
  return ts;
}

std::vector<PoseEstimate> noisy_estimates(const WorldState& truth, double translation_scale, double yaw_scale,
                                          std::uint64_t seed) {
  if (translation_scale < 0.0 || yaw_scale < 0.0) throw std::invalid_argument("noise scales must be >= 0");
  Rng rng = make_rng(seed, "pose_noise");
  std::vector<PoseEstimate> out;
  for (const auto& o : truth.objects) {
    PoseEstimate e;
    e.object_id = o.id;
    e.translation_noise_scale = translation_scale;
    e.yaw_noise_scale = yaw_scale;
    const Vec3 dt(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    const double dyaw = uniform(rng, -1, 1) * yaw_scale;
    e.pose.t = o.pose.t + translation_scale * dt;
    e.pose.q = canonical(Quat(Eigen::AngleAxisd(dyaw, Vec3::UnitZ())) * o.pose.q);
    out.push_back(e);
  }
  return out;
}

WorldState apply_estimates(const WorldState& base, const std::vector<PoseEstimate>& estimates) {
  WorldState w = base;
  for (const auto& e : estimates) {
    auto* o = w.find(e.object_id);
    if (!o) throw std::invalid_argument("estimate references unknown object " + std::to_string(e.object_id));
    o->pose = e.pose;
    o->refresh_support_height();
  }
  return w;
}

}  // namespace prism
