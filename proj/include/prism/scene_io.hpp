#pragma once

#include "prism/raster.hpp"
#include "prism/world.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace prism {

using json = nlohmann::json;

/// Malformed or unreadable input; the message names the file and, for parse errors, the byte offset.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Scene {
  WorldState world;
  std::vector<Camera> cameras;
};

/// Standard views: scene, right, front, bird, plus an extra oblique view used by the view-count study.
std::vector<Camera> default_cameras();

json pose_to_json(const Pose& p);
Pose pose_from_json(const json& j);
json shape_to_json(const Shape& s);
Shape shape_from_json(const json& j);
json camera_to_json(const Camera& c);
Camera camera_from_json(const json& j);
json object_to_json(const SceneObject& o);
SceneObject object_from_json(const json& j);
json gripper_to_json(const GripperState& g);
GripperState gripper_from_json(const json& j);
json world_to_json(const WorldState& w);
WorldState world_from_json(const json& j);

json scene_to_json(const Scene& s);
Scene scene_from_json(const json& j);

json task_to_json(const TaskSpec& t);
TaskSpec task_from_json(const json& j);

/// Reads and parses a JSON file, throwing ConfigError with the path on any failure.
json read_json_file(const std::filesystem::path& path);
/// Writes with 2-space indentation and a trailing newline.
void write_json_file(const std::filesystem::path& path, const json& j);

Scene load_scene(const std::filesystem::path& path);
TaskSpec load_task(const std::filesystem::path& path);

}  // namespace prism
