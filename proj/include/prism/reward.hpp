#pragma once

#include "prism/encode.hpp"
#include "prism/mlp.hpp"
#include "prism/oracle.hpp"
#include "prism/replay.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace prism {

struct RewardRecord {
  PackedFeatures x;
  int label = 0;
  Stage stage = Stage::post;
  double weight = 1.0;
  bool truth = false;  // 3D predicate at query time, for accuracy metrics only
};

struct RewardDataset {
  FeatureLayout layout;
  std::vector<RewardRecord> records;

  /// Throws std::invalid_argument for labels outside {0, 1}, non-positive weights or size mismatch.
  void add(const FeatureVector& x, int label, Stage stage, bool truth, double weight = 1.0);
};

struct RewardTrainConfig {
  std::vector<int> hidden = {64, 32};
  int batch = 64;
  double lr = 3e-4;  // Adam; 1e-3 saturates the tanh layer on the dense depth inputs
  int steps = 2000;
  double clip_norm = 5.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

/// Sigmoid over the network's scalar logit.
struct RewardModel {
  Mlp net;
  FeatureLayout layout;

  /// Probability in (0, 1). Throws std::invalid_argument on size mismatch or non-finite input.
  double forward(const FeatureVector& x) const;
};

struct RewardTrainResult {
  RewardModel model;
  std::vector<double> loss_trace;
  bool degenerate = false;  // single-class dataset
};

double sigmoid(double z);

/// Weighted mean BCE over the columns of X; accumulates parameter gradients into g.
double bce_loss_and_grads(const Mlp& net, const Mat& X, const std::vector<int>& labels,
                          const std::vector<double>& weights, Mlp::Grads& g);

/// Minibatch Adam on weighted mean BCE with gradient-norm clipping. `warm_start` continues from existing
/// parameters (same layout required). Throws std::invalid_argument on an empty dataset.
RewardTrainResult train_reward(const RewardDataset& ds, const RewardTrainConfig& cfg,
                               const RewardModel* warm_start = nullptr);

/// Fraction of records whose thresholded prediction equals the 3D truth (or the label when `vs_truth` is false).
double reward_accuracy(const RewardModel& m, const RewardDataset& ds, bool vs_truth = true);

/// Rewrites every stored reward with forward(model, stored features). OpenMP over transitions.
void relabel(ReplayBuffer& buf, const RewardModel& m);
void relabel_serial(ReplayBuffer& buf, const RewardModel& m);
/// Number of transitions whose stored reward differs from forward(model, stored features).
std::size_t audit_relabel(const ReplayBuffer& buf, const RewardModel& m);

/// Trains a scene-view predictor on the pre-stage records (view 0 of each record).
RewardTrainResult derive_feasibility(const RewardDataset& ds, const RewardTrainConfig& cfg);

struct GateConfig {
  std::vector<GripperCommand> irreversible = {GripperCommand::close};
  double threshold = 0.5;
};

struct GateDecision {
  bool allowed = true;
  Action action;
  double probability = 1.0;
};

/// Denies irreversible commands predicted infeasible (p < threshold; ties allow). A denied command becomes
/// hold with the deltas preserved. `scene_view` is the single-view observation the predictor was trained on.
GateDecision gate(const RewardModel& feasibility, const IdDepthImage& scene_view, Aperture aperture,
                  const Action& action, const GateConfig& cfg = {}, const WorldConfig& wcfg = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& trace);

json layout_to_json(const FeatureLayout& l);
FeatureLayout layout_from_json(const json& j);

/// Binary checkpoint plus `<path>.json` manifest (architecture, layout, kind).
void save_reward_model(const std::filesystem::path& path, const RewardModel& m, const std::string& kind);
RewardModel load_reward_model(const std::filesystem::path& path);

}  // namespace prism
