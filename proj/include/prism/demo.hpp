#pragma once

#include "prism/library.hpp"
#include "prism/raster.hpp"
#include "prism/world.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace prism {

struct DemoFrame {
  Pose gripper;
  Aperture aperture = Aperture::open;
  Action action;
  std::vector<IdDepthImage> views;      // empty when loaded without images
  std::vector<std::string> obs_refs;    // blob hashes, one per view
};

struct Demonstration {
  std::string id;
  TaskSpec task;
  std::vector<DemoFrame> frames;
  std::string source = "scripted";
};

/// One replayed frame: the simulated state before the frame's action, and that action.
struct SimFrame {
  WorldState state;
  Action action;
};

struct SimDemonstration {
  std::string demo_id;
  WorldState initial;  // the refined scene the replay started from
  std::vector<SimFrame> frames;
};

/// Gripper-object alignment requirement at a key timestep.
struct TrajectoryConstraint {
  int timestep = 0;
  int object_id = 0;
  double epsilon = 0.02;
  bool final_state = false;
};

struct ConstraintCheck {
  TrajectoryConstraint constraint;
  double residual = 0.0;  // |gripper - object| at the key timestep
  bool satisfied = false;
};

struct ReplayReport {
  bool success = false;
  std::vector<ConstraintCheck> constraints;
  bool task_success = false;
  double max_residual = 0.0;
};

struct ScriptConfig {
  double hover = 0.08;
  double lift = 0.15;
  double release_gap = 0.004;
  int step_budget = 200;
  bool render = true;
};

/// Waypoint controller (approach, align, grasp or press, transport, release) run in the ground-truth
/// world. Throws std::runtime_error when a waypoint is unreachable within the step budget or the
/// final frame does not satisfy the task.
Demonstration generate_scripted_demo(const TaskScene& truth, std::uint64_t seed, const ScriptConfig& cfg = {},
                                     const WorldConfig& wcfg = {});

/// Open-loop replay of the demo's actions from `scene`, capturing the state at every frame.
SimDemonstration map_to_sim(const Demonstration& demo, const WorldState& scene, const WorldConfig& wcfg = {});

/// One constraint per open-to-close transition (bound to the nearest graspable object in `scene_for_binding`
/// at that frame) plus one at the final frame bound to the task's first target.
std::vector<TrajectoryConstraint> extract_key_states(const Demonstration& demo, const WorldState& scene_for_binding,
                                                     double epsilon, const WorldConfig& wcfg = {});

ReplayReport replay_report(const SimDemonstration& sim, const std::vector<TrajectoryConstraint>& constraints,
                           const TaskSpec& task, const WorldConfig& wcfg = {});

/// Multi-view rendering of a world.
std::vector<IdDepthImage> render_views(const WorldState& w, const std::vector<Camera>& cameras);

/// Demo JSON with image blobs written under `blob_dir` (content-addressed by 64-bit FNV-1a).
json demo_to_json(const Demonstration& demo, const std::optional<std::filesystem::path>& blob_dir);
Demonstration demo_from_json(const json& j, const std::optional<std::filesystem::path>& blob_dir);

std::string write_image_blob(const IdDepthImage& img, const std::filesystem::path& blob_dir);
IdDepthImage read_image_blob(const std::string& hash, const std::filesystem::path& blob_dir);

json action_to_json(const Action& a);
Action action_from_json(const json& j);

json replay_report_to_json(const ReplayReport& r);

}  // namespace prism
