#pragma once

#include "prism/rng.hpp"
#include "prism/scene_io.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace prism {

/// A ground-truth scene plus the task defined on it.
struct TaskScene {
  Scene scene;
  TaskSpec task;
};

/// Built-in primitive stand-ins for the evaluated tasks (banana/mustard lift, button press, pen insert,
/// apple-into-bowl, can stacking). `jitter` displaces object placements uniformly by up to that many
/// meters per planar axis; the result is settled.
TaskScene make_task_scene(TaskFamily family, std::uint64_t seed, double jitter = 0.0);

struct PoseEstimate {
  int object_id = 0;
  Pose pose;
  double translation_noise_scale = 0.0;
  double yaw_noise_scale = 0.0;
};

/// Stand-in for an off-the-shelf 6-D pose estimator: ground truth plus uniform per-axis
/// translation noise in [-translation_scale, translation_scale] and yaw noise in [-yaw_scale, yaw_scale].
std::vector<PoseEstimate> noisy_estimates(const WorldState& truth, double translation_scale, double yaw_scale,
                                          std::uint64_t seed);

/// Copy of `base` with object poses replaced by the estimates (support heights refreshed).
WorldState apply_estimates(const WorldState& base, const std::vector<PoseEstimate>& estimates);

}  // namespace prism
