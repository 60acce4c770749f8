#pragma once

#include "prism/geometry.hpp"
#include "prism/raster.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace prism {

/// Id reserved for the rendered gripper proxy; scene objects must not use it.
inline constexpr int kGripperId = 1000;
/// Radius of the rendered gripper proxy sphere.
inline constexpr double kGripperProxyRadius = 0.012;

enum class Aperture { open, closed };
enum class GripperCommand { open, close, hold };

struct SceneObject {
  int id = 0;
  std::string name;
  Shape shape = Sphere{0.05};
  Pose pose;
  bool graspable = true;
  double support_height = 0.0;  // origin height above the table when resting
  bool container = false;       // open receptacle: neither collides nor supports
  double press_travel = 0.0;    // > 0 for push buttons

  /// Recomputes support_height from shape and orientation.
  void refresh_support_height() { support_height = resting_offset(shape, pose.q); }
};

struct GripperState {
  Pose pose;
  Aperture aperture = Aperture::open;
  std::optional<int> held;
  Pose grasp_offset;  // gripper -> held object, valid while held
};

struct WorldState {
  std::vector<SceneObject> objects;
  GripperState gripper;
  double table_height = 0.0;
  int step_count = 0;

  const SceneObject* find(int id) const;
  SceneObject* find(int id);
  const SceneObject& at(int id) const;
  bool is_held(int id) const { return gripper.held && *gripper.held == id; }
};

struct Action {
  Vec3 delta_translation = Vec3::Zero();
  double delta_yaw = 0.0;
  GripperCommand gripper_command = GripperCommand::hold;
};

struct WorldConfig {
  double grasp_radius = 0.03;
  double stack_overlap_frac = 0.5;
  double max_translation = 0.05;
  double max_yaw = 0.2;
  Vec3 workspace_lo = Vec3(-0.45, -0.45, 0.0);
  Vec3 workspace_hi = Vec3(0.45, 0.45, 0.6);
  int footprint_samples = 15;  // per axis; odd so the center is sampled
  double contact_tolerance = 1e-4;
};

Action clamp_action(const Action& a, const WorldConfig& cfg);

/// Lowest world z of the posed object.
double lowest_point(const SceneObject& obj);
double highest_point(const SceneObject& obj);

struct Contact {
  int a;
  int b;  // 0 = table
  double depth;
};

/// All pairs penetrating deeper than cfg.contact_tolerance, plus table penetrations (b = 0) deeper than 1e-6.
std::vector<Contact> check_collision(const WorldState& w, const WorldConfig& cfg = {});

/// Fraction of `obj`'s footprint lying over `other`'s footprint.
double footprint_overlap(const SceneObject& obj, const SceneObject& other, int samples);

/// Drops every unheld object to its lowest supported, non-penetrating height. Objects whose
/// footprint overlaps a supporter by less than stack_overlap_frac slide off it first.
WorldState settle(const WorldState& w, const WorldConfig& cfg = {});

/// Id of the object `id` rests on (0 = table), or nullopt when held or not at rest.
std::optional<int> support_parent(const WorldState& w, int id, const WorldConfig& cfg = {});

/// One quasi-static transition from a settled state; infeasible held-object motion is truncated at
/// contact. The world is re-settled whenever a grasp, release or button press changes support.
WorldState step(const WorldState& w, const Action& a, const WorldConfig& cfg = {});

/// Scene objects plus the gripper proxy, ready for rasterization.
std::vector<RenderItem> render_items(const WorldState& w, bool with_gripper = true);

enum class TaskFamily { lift, press, insert, pick_place, stack };

TaskFamily parse_task_family(const std::string& s);
std::string to_string(TaskFamily f);

struct TaskSpec {
  TaskFamily family = TaskFamily::lift;
  std::vector<int> target_ids;
  std::map<std::string, double> thresholds;

  double threshold(const std::string& key, double fallback) const;
};

/// Handcrafted success predicate. For evaluation and oracle validation only.
bool task_success(const WorldState& w, const TaskSpec& task, const WorldConfig& cfg = {});

}  // namespace prism
