#pragma once

#include "prism/library.hpp"
#include "prism/refine.hpp"
#include "prism/training.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace prism {

enum class PipelineStage { demo_generate, scene_ground, refine, demo_replay, reward_bootstrap, policy_train, policy_eval };
constexpr int kStageCount = 7;
const char* stage_name(PipelineStage s);

/// A stage failed; `artifact` is the file it was reading or writing.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, std::filesystem::path artifact, const std::string& what);
  std::string stage;
  std::filesystem::path artifact;
};

struct RunConfig {
  // Scene source: files when given, else the procedural library.
  std::optional<std::filesystem::path> scene_path;
  std::optional<std::filesystem::path> task_path;
  std::optional<std::filesystem::path> template_path;
  TaskFamily family = TaskFamily::lift;
  std::uint64_t library_seed = 100;
  double library_jitter = 0.0;

  int demos = 5;
  double estimate_translation = 0.03;  // pose-estimator noise (m)
  double estimate_yaw = 0.05;          // rad
  int refine_passes = 3;
  RefineConfig refine;

  double p_flip = 0.05;
  int label_views = 4;

  TrainConfig train;
  EvalConfig eval;
  int bc_steps = 2000;            // BC-only baseline; 0 skips it
  bool gate_eval = true;          // paired noisy evaluation with and without the feasibility gate
  int gate_episodes = 100;
  double gate_noise = 0.03;
  GateConfig gate;
  double min_success = 0.0;       // policy eval below this is an acceptance failure

  StudyConfig study;
  std::uint64_t seed = 1;
};

/// Paths inside the config resolve against `base_dir`. Unknown keys, missing files and out-of-range values
/// raise ConfigError.
RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir);
json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// Hex FNV-1a of the canonical config JSON.
std::string config_hash(const RunConfig& c);

struct PipelineOptions {
  std::filesystem::path run_dir = "run";
  bool resume = false;
};

struct PipelineOutcome {
  std::vector<std::string> executed;
  std::vector<std::string> skipped;
  std::optional<double> eval_success;  // when the eval stage ran or was already complete
};

/// Runs every stage up to and including `last`. Completed stages recorded in the manifest under the same config
/// hash are skipped. A partial run restarts from scratch unless `resume` is set. A manifest written for a
/// different config is a ConfigError.
PipelineOutcome run_pipeline(const RunConfig& cfg, const PipelineOptions& opt, PipelineStage last = PipelineStage::policy_eval);

/// View-count study for the four labeled skill families: <out_dir>/<skill>.csv and summary.json.
json run_view_study(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Plot-ready summary of a run directory into plots/summary.json. Throws StageError listing missing inputs.
json emit_plots(const std::filesystem::path& run_dir);

void save_reward_dataset(const std::filesystem::path& path, const RewardDataset& ds);
RewardDataset load_reward_dataset(const std::filesystem::path& path);

}  // namespace prism
