#pragma once

#include "prism/encode.hpp"
#include "prism/mlp.hpp"
#include "prism/replay.hpp"
#include "prism/scene_io.hpp"

#include <array>
#include <string>
#include <vector>

namespace prism {

constexpr int kContinuousDims = 4;  // dx, dy, dz, dyaw
constexpr int kGripperChoices = 3;  // indexed like GripperCommand

struct SacConfig {
  double gamma = 0.99;
  double tau = 0.005;
  double target_entropy = -5.0;
  double initial_alpha = 0.1;
  double lambda_bc = 1.0;
  double bc_decay = 0.999;  // per update
  int batch = 256;
  int demo_batch = 64;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  std::vector<int> hidden = {64, 64};
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  /// Divide the SAC actor objective by max(1, mean |min Q|) over the batch (held constant).
  bool normalize_actor = true;
  /// Terminal transitions target r / (1 - gamma), as if the success state repeated forever, instead of r.
  bool absorbing_success = true;

  /// Throws ConfigError when out of range.
  void check() const;
};

enum class ActMode { stochastic, deterministic };

struct PolicyAction {
  Action action;
  std::array<double, kContinuousDims> a{};  // normalized continuous part
  int grip = 2;
  double log_prob = 0.0;  // continuous density in normalized space plus categorical log-probability
};

/// Actor: features -> [mean(4), log-std pre-activation(4), gripper logits(3)]. The log-std is squashed
/// smoothly into [log_std_min, log_std_max].
struct Policy {
  Mlp net;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  Policy() = default;
  Policy(int feature_dim, const std::vector<int>& hidden, Rng& rng, double ls_min = -5.0, double ls_max = 2.0);

  PolicyAction act(const std::vector<double>& features, ActMode mode, Rng& rng, const WorldConfig& wcfg = {}) const;
  /// log density of a normalized continuous action in (-1, 1)^4 given the features (change of variables
  /// through tanh), excluding the gripper term.
  double continuous_log_prob(const std::vector<double>& features, const std::array<double, kContinuousDims>& a) const;
  double log_std(double raw) const;
};

/// Twin critics over [features, continuous action] with one output per gripper command, plus targets.
struct Critics {
  Mlp q1, q2, t1, t2;

  Critics() = default;
  Critics(int feature_dim, const std::vector<int>& hidden, Rng& rng);
};

struct SacAgent {
  Policy policy;
  Critics critics;
  double log_alpha = 0.0;
  double lambda_bc = 1.0;
  long updates = 0;
  Adam actor_opt, q1_opt, q2_opt;
  ScalarAdam alpha_opt;

  SacAgent() = default;
  SacAgent(int feature_dim, const SacConfig& cfg, std::uint64_t seed);
  double alpha() const;
};

struct SacDiagnostics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double bc_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;
  double max_target = 0.0;
};

/// Fixed minibatch used by sac_update (and by tests to freeze batches). demo_* duplicate the trailing
/// demonstration columns of s / a / grip.
struct SacBatch {
  Mat s, s2;    // features x B
  Mat a;        // 4 x B
  std::vector<int> grip;
  VecX r;
  std::vector<char> done;
  Mat demo_s, demo_a;
  std::vector<int> demo_grip;
};

SacBatch sample_batch(const ReplayBuffer& buf, const SacConfig& cfg, Rng& rng);

/// Clipped double-Q soft targets. Success is absorbing, so a terminal transition is worth r / (1 - gamma).
/// The target-network value is clamped to [0, 1 / (1 - gamma)]. `bound` receives 1 / (1 - gamma) + alpha * max |log pi| over the sampled next actions.
VecX critic_targets(const SacAgent& agent, const SacBatch& batch, const SacConfig& cfg, Rng& rng,
                    double* bound = nullptr);

/// One critic, actor, temperature and target step (critic and targets only when `update_actor` is false).
/// Throws std::runtime_error on non-finite losses or a critic target outside its bound.
SacDiagnostics sac_update(SacAgent& agent, const SacBatch& batch, const SacConfig& cfg, Rng& rng,
                          bool update_actor = true);
SacDiagnostics sac_update(SacAgent& agent, const ReplayBuffer& buf, const SacConfig& cfg, Rng& rng,
                          bool update_actor = true);

/// Behavior-cloning-only actor step on the demo part of the batch; returns the BC loss.
double bc_update(Policy& policy, Adam& opt, const Mat& demo_s, const Mat& demo_a, const std::vector<int>& demo_grip);

// ---- loss functions exposed for gradient checks ----

/// Critic regression loss 0.5 mean (Q[grip] - y)^2 for one network; accumulates parameter gradients and
/// returns the gradient with respect to the critic input in `d_input` when non-null.
double critic_loss_and_grads(const Mlp& q, const Mat& s, const Mat& a, const std::vector<int>& grip, const VecX& y,
                             Mlp::Grads& g, Mat* d_input = nullptr);

/// Actor objective for fixed noise `eps` (4 x B): mean over the batch of
/// alpha * log pi_c + sum_k p_k (alpha log p_k - min(Q1, Q2)_k). Accumulates actor parameter gradients.
double actor_loss_and_grads(const Policy& pi, const Mlp& q1, const Mlp& q2, double alpha, const Mat& s,
                            const Mat& eps, Mlp::Grads& g, double* mean_log_prob = nullptr,
                            double* mean_abs_q = nullptr);

/// lambda * (mean squared tanh(mean) error + mean gripper cross-entropy). Accumulates actor gradients.
double bc_loss_and_grads(const Policy& pi, const Mat& s, const Mat& a, const std::vector<int>& grip, double lambda,
                         Mlp::Grads& g);

void save_agent(const std::filesystem::path& path, const SacAgent& agent, const json& extra);
/// Restores the policy (and critics when present) from a checkpoint written by save_agent.
Policy load_policy(const std::filesystem::path& path);

}  // namespace prism
