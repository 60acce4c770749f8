#pragma once

#include "prism/demo.hpp"
#include "prism/oracle.hpp"
#include "prism/reward.hpp"
#include "prism/sac.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace prism {

struct RandomizeConfig {
  double object_translation = 0.10;  // uniform per planar axis
  double ee_sigma = 0.02;            // Gaussian per axis
  int max_tries = 20;
};

/// Perturbed copy of a settled scene. Resamples until the settled result is collision-free and every object
/// keeps its original support. Throws std::runtime_error after max_tries failures.
WorldState randomize_init(const WorldState& scene, const RandomizeConfig& cfg, Rng& rng, const WorldConfig& wcfg = {});

/// A refined scene together with its replayed demonstration.
struct TrainScene {
  std::string id;
  WorldState world;
  TaskSpec task;
  SimDemonstration sim;
};

/// Rendering and feature extraction shared by training and evaluation. The first camera is the scene view
/// the policy observes; the first `reward_views` cameras feed the reward model.
struct Perception {
  std::vector<Camera> cameras;
  FeatureLayout layout;
  std::vector<int> target_ids;
  WorldConfig wcfg;

  Perception(std::vector<Camera> cams, const TaskSpec& task, int reward_views = 4, int grid = 24,
             const WorldConfig& wcfg = {});
  std::vector<IdDepthImage> render(const WorldState& w) const;
  std::vector<double> policy_obs(const std::vector<IdDepthImage>& views, const WorldState& w) const;
  FeatureVector reward_obs(const std::vector<IdDepthImage>& views, const WorldState& w, const Action& a) const;
};

/// Continuous part of an action normalized by the clamps.
std::array<double, kContinuousDims> normalized_deltas(const Action& a, const WorldConfig& wcfg = {});

/// Labels collected from the noisy oracle.
struct LabelSource {
  QueryTemplate tmpl;
  std::vector<Camera> cameras;  // label views
  OracleErrorModel err;
  std::uint64_t queries = 0;

  /// Queries one stage on `w`; increments the query counter.
  LabelRecord query(const WorldState& w, const TaskSpec& task, Stage stage);
};

/// Pre- and post-stage records from the demonstrations: the close frame (pre, label from the moved state), every
/// frame with a hold action (post), plus the first frame with close substituted (pre).
void bootstrap_reward_dataset(const std::vector<TrainScene>& scenes, const Perception& per, LabelSource& labels,
                              RewardDataset& ds);

/// Demo transitions for the replay buffer and BC batches, cut at the first success.
std::vector<Transition> demo_transitions(const TrainScene& scene, const Perception& per, const RewardModel& reward);

struct TrainConfig {
  SacConfig sac;
  RewardTrainConfig reward;
  RandomizeConfig randomize;
  long total_steps = 100000;
  int horizon = 60;
  int reward_period = 2000;     // env steps between reward-model updates
  int label_budget = 128;       // oracle queries per reward period
  int reward_retrain_steps = 300;
  int bc_pretrain_steps = 2000;
  long learning_starts = 1000;  // env steps before SAC updates begin
  long critic_warmup = 2000;    // updates that train only the critics
  int updates_per_step = 1;
  long checkpoint_every = 10000;
  int select_episodes = 20;     // evaluation episodes per checkpoint for best-policy selection; 0 disables
  std::size_t replay_capacity = 100000;
  bool use_demos = true;        // demonstrations in the buffer and BC loss
  std::uint64_t seed = 1;

  void check() const;
};

json train_config_to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys and out-of-range values raise ConfigError.
TrainConfig train_config_from_json(const json& j);

struct MetricsRow {
  long step = 0;
  double success_rate = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double alpha = 0.0;
  double reward_acc = 0.0;
  std::uint64_t label_queries = 0;
};

struct TrainResult {
  Policy policy;           // selected policy (best checkpoint when selection is on, else final)
  long selected_step = 0;
  RewardModel reward;
  RewardDataset reward_data;
  std::vector<MetricsRow> metrics;
  std::size_t relabel_mismatches = 0;  // summed audits after every reward update
  int reward_updates = 0;
};

struct TrainHooks {
  /// Called after every reward update and relabel.
  std::function<void(long step, const ReplayBuffer&, const RewardModel&)> after_relabel;
  std::function<void(const MetricsRow&)> on_metrics;
};

/// Alternating reward / policy optimization. Writes checkpoints under `out_dir` when set.
TrainResult run_training(const std::vector<TrainScene>& scenes, const RewardDataset& bootstrap, LabelSource& labels,
                         const Perception& per, const TrainConfig& cfg,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                         const TrainHooks& hooks = {});

/// Behavior cloning on the demonstrations only.
Policy train_bc_only(const std::vector<TrainScene>& scenes, const Perception& per, const SacConfig& sac, int steps,
                     std::uint64_t seed);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

// ---- evaluation ----

struct Observation {
  const WorldState& world;
  const std::vector<IdDepthImage>& views;
  int t;
};
using Controller = std::function<Action(const Observation&)>;

/// Deterministic-mode policy as a controller.
Controller policy_controller(const Policy& policy, const Perception& per);

struct EvalConfig {
  int episodes = 50;
  int horizon = 60;
  RandomizeConfig randomize;
  double action_noise = 0.0;  // Gaussian sigma (m) added to translation deltas
  std::uint64_t seed = 7;
};

struct EpisodeLog {
  std::string scene;
  bool success = false;
  int steps = 0;
  int denied = 0;
};

struct EvalResult {
  double success_rate = 0.0;
  std::vector<EpisodeLog> episodes;
};

/// Episode i starts from randomize_init of scene i mod n with a stream derived from (seed, i), so runs with
/// the same seed are paired. A feasibility model, when given, gates the noisy action.
EvalResult evaluate(const Controller& controller, const std::vector<TrainScene>& scenes, const Perception& per,
                    const EvalConfig& cfg, const RewardModel* feasibility = nullptr, const GateConfig& gate_cfg = {});

json eval_to_json(const EvalResult& r);

}  // namespace prism
