#pragma once

#include "prism/demo.hpp"
#include "prism/library.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace prism {

struct RefineConfig {
  double epsilon_g = 0.02;
  int penalty_rounds = 5;
  double penalty_initial = 10.0;
  double penalty_growth = 10.0;
  int restarts = 8;  // in addition to the start at the raw estimates
  int max_sweeps = 40;
  double initial_step = 0.01;
  double initial_yaw_step = 0.05;
  double min_step = 1e-6;
  /// Sum over every timestep instead of key states only.
  bool full_trajectory_objective = false;
  std::uint64_t seed = 0;
};

struct RefinementProblem {
  WorldState base;  // shapes, table, initial gripper; object poses are overwritten by the estimates
  std::vector<PoseEstimate> estimates;
  Demonstration demonstration;
  std::vector<TrajectoryConstraint> constraints;
  RefineConfig config;
};

struct Violation {
  std::string kind;  // "collision", "table", "support", "trajectory", "task"
  int object_a = 0;
  int object_b = 0;
  int timestep = 0;
  double magnitude = 0.0;
};

struct RefinementResult {
  std::vector<PoseEstimate> poses;
  double objective = 0.0;
  bool feasible = false;
  std::vector<Violation> violations;
  int iterations = 0;
  int restart = 0;
  /// Penalized objective after every inner sweep, one list per penalty round, for the winning restart.
  std::vector<std::vector<double>> round_trace;
};

/// Builds a problem whose constraints come from extract_key_states on the estimated scene.
RefinementProblem make_problem(const WorldState& base, std::vector<PoseEstimate> estimates, Demonstration demo,
                               const RefineConfig& cfg, const WorldConfig& wcfg = {});

/// Feasibility of concrete poses: environment constraints on the initial scene and along the replayed
/// trajectory, and every trajectory constraint. Pure.
std::vector<Violation> validate(const std::vector<PoseEstimate>& poses, const RefinementProblem& problem,
                                const WorldConfig& wcfg = {});

/// Key-state objective: squared gripper-object distance for each bound constraint, plus planar squared
/// distance of the remaining task targets at the final key state.
double refinement_objective(const std::vector<PoseEstimate>& poses, const RefinementProblem& problem,
                            const WorldConfig& wcfg = {});

RefinementResult refine(const RefinementProblem& problem, const WorldConfig& wcfg = {});

json refinement_result_to_json(const RefinementResult& r);

}  // namespace prism
