#include "prism/training.hpp"

#include "prism/collision.hpp"
#include "prism/json_config.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace prism {

WorldState randomize_init(const WorldState& scene, const RandomizeConfig& cfg, Rng& rng, const WorldConfig& wcfg) {
  std::vector<std::optional<int>> parents;
  for (const auto& o : scene.objects) parents.push_back(support_parent(scene, o.id, wcfg));
  for (int attempt = 0; attempt < cfg.max_tries; ++attempt) {
    WorldState w = scene;
    for (auto& o : w.objects) {
      if (w.is_held(o.id)) continue;
      o.pose.t.x() += uniform(rng, -cfg.object_translation, cfg.object_translation);
      o.pose.t.y() += uniform(rng, -cfg.object_translation, cfg.object_translation);
    }
    for (int k = 0; k < 3; ++k) w.gripper.pose.t[k] += cfg.ee_sigma * standard_normal(rng);
    if (cfg.object_translation == 0.0 && cfg.ee_sigma == 0.0) return w;
    w.gripper.pose.t = w.gripper.pose.t.cwiseMax(wcfg.workspace_lo).cwiseMin(wcfg.workspace_hi);
    w = settle(w, wcfg);
    if (!check_collision(w, wcfg).empty()) continue;
    bool same = true;
    for (std::size_t i = 0; i < w.objects.size() && same; ++i) {
      same = support_parent(w, w.objects[i].id, wcfg) == parents[i];
    }
    // The gripper proxy must start clear of every object.
    for (const auto& o : w.objects) {
      if (!same) break;
      same = !contains_local(o.shape, o.pose.apply_inverse(w.gripper.pose.t));
    }
    if (same) return w;
  }
  throw std::runtime_error("randomize_init: no feasible sample in " + std::to_string(cfg.max_tries) + " tries");
}

Perception::Perception(std::vector<Camera> cams, const TaskSpec& task, int reward_views, int grid,
                       const WorldConfig& w)
    : cameras(std::move(cams)), target_ids(task.target_ids), wcfg(w) {
  if (reward_views < 1 || reward_views > static_cast<int>(cameras.size())) {
    throw ConfigError("reward views must lie in [1, " + std::to_string(cameras.size()) + "]");
  }
  layout = reward_layout(task.target_ids, reward_views, grid);
}

std::vector<IdDepthImage> Perception::render(const WorldState& w) const {
  const auto items = render_items(w);
  std::vector<IdDepthImage> out;
  out.reserve(static_cast<std::size_t>(layout.views));
  for (int i = 0; i < layout.views; ++i) out.push_back(rasterize(items, cameras[static_cast<std::size_t>(i)]));
  return out;
}

std::vector<double> Perception::policy_obs(const std::vector<IdDepthImage>& views, const WorldState& w) const {
  return policy_features(views.at(0), cameras.at(0), w, target_ids);
}

FeatureVector Perception::reward_obs(const std::vector<IdDepthImage>& views, const WorldState& w,
                                     const Action& a) const {
  return encode(views, layout, w.gripper.aperture, a, wcfg);
}

std::array<double, kContinuousDims> normalized_deltas(const Action& a, const WorldConfig& wcfg) {
  const auto v = encode_action(a, wcfg);
  return {v[0], v[1], v[2], v[3]};
}

LabelRecord LabelSource::query(const WorldState& w, const TaskSpec& task, Stage stage) {
  const auto rels = bind_relations(stage == Stage::pre ? tmpl.pre_task : tmpl.post_task, task);
  LabelRecord r = noisy_label(w, cameras, rels, err, queries++);
  r.stage = stage;
  return r;
}

namespace {

Action with_command(Action a, GripperCommand c) {
  a.gripper_command = c;
  return a;
}

// World in which a close issued with `a` takes effect: the translation happens first.
WorldState moved(const WorldState& w, const Action& a, const WorldConfig& wcfg) {
  return step(w, with_command(a, GripperCommand::hold), wcfg);
}

}  // namespace

void bootstrap_reward_dataset(const std::vector<TrainScene>& scenes, const Perception& per, LabelSource& labels,
                              RewardDataset& ds) {
  ds.layout = per.layout;
  for (const auto& sc : scenes) {
    const auto& frames = sc.sim.frames;
    if (frames.empty()) continue;
    bool closed = false;
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const auto& f = frames[t];
      const auto views = per.render(f.state);
      if (!closed && f.action.gripper_command == GripperCommand::close && f.state.gripper.aperture == Aperture::open) {
        closed = true;
        const WorldState m = moved(f.state, f.action, per.wcfg);
        const auto lab = labels.query(m, sc.task, Stage::pre);
        ds.add(per.reward_obs(views, f.state, f.action), lab.label, Stage::pre,
               ground_truth(m, sc.task, Stage::pre, per.wcfg));
      }
      if (t == 0) {
        const Action c = with_command(f.action, GripperCommand::close);
        const WorldState m = moved(f.state, c, per.wcfg);
        const auto lab = labels.query(m, sc.task, Stage::pre);
        ds.add(per.reward_obs(views, f.state, c), lab.label, Stage::pre,
               ground_truth(m, sc.task, Stage::pre, per.wcfg));
      }
      const auto lab = labels.query(f.state, sc.task, Stage::post);
      ds.add(per.reward_obs(views, f.state, Action{}), lab.label, Stage::post,
             task_success(f.state, sc.task, per.wcfg));
      if (task_success(f.state, sc.task, per.wcfg)) break;
    }
  }
}

std::vector<Transition> demo_transitions(const TrainScene& scene, const Perception& per, const RewardModel& reward) {
  std::vector<Transition> out;
  const auto& frames = scene.sim.frames;
  if (frames.size() < 2) return out;
  auto views = per.render(frames[0].state);
  for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
    const auto& s = frames[t].state;
    const auto& s2 = frames[t + 1].state;
    const auto views2 = per.render(s2);
    Transition tr;
    tr.s = per.policy_obs(views, s);
    tr.s2 = per.policy_obs(views2, s2);
    tr.a = normalized_deltas(frames[t].action, per.wcfg);
    tr.grip = static_cast<int>(frames[t].action.gripper_command);
    tr.done = task_success(s2, scene.task, per.wcfg);
    tr.is_demo = true;
    const FeatureVector x = tr.done ? per.reward_obs(views2, s2, Action{}) : per.reward_obs(views, s, frames[t].action);
    tr.reward_features = pack(x, per.layout);
    tr.reward = reward.forward(tr.reward_features.unpack());
    out.push_back(std::move(tr));
    if (out.back().done) break;
    views = views2;
  }
  return out;
}

void TrainConfig::check() const {
  sac.check();
  if (total_steps < 0 || horizon < 1 || reward_period < 1 || label_budget < 0) {
    throw ConfigError("train: steps, horizon, reward period and label budget must be positive");
  }
  if (updates_per_step < 0 || checkpoint_every < 1 || select_episodes < 0 || critic_warmup < 0) {
    throw ConfigError("train: bad update or checkpoint cadence");
  }
  if (replay_capacity < static_cast<std::size_t>(sac.batch)) throw ConfigError("train: replay capacity below batch");
  if (reward.lr <= 0.0 || reward.weight_decay < 0.0 || reward.batch < 1 || reward.steps < 1 || reward_retrain_steps < 0) {
    throw ConfigError("train.reward: lr and steps must be positive, weight_decay >= 0");
  }
  if (randomize.object_translation < 0.0 || randomize.ee_sigma < 0.0 || randomize.max_tries < 1) {
    throw ConfigError("train: bad randomization scales");
  }
}

json train_config_to_json(const TrainConfig& c) {
  return {{"total_steps", c.total_steps},
          {"horizon", c.horizon},
          {"reward_period", c.reward_period},
          {"label_budget", c.label_budget},
          {"reward_retrain_steps", c.reward_retrain_steps},
          {"bc_pretrain_steps", c.bc_pretrain_steps},
          {"learning_starts", c.learning_starts},
          {"critic_warmup", c.critic_warmup},
          {"updates_per_step", c.updates_per_step},
          {"checkpoint_every", c.checkpoint_every},
          {"select_episodes", c.select_episodes},
          {"replay_capacity", c.replay_capacity},
          {"use_demos", c.use_demos},
          {"randomize",
           {{"object_translation", c.randomize.object_translation},
            {"ee_sigma", c.randomize.ee_sigma},
            {"max_tries", c.randomize.max_tries}}},
          {"sac",
           {{"gamma", c.sac.gamma},
            {"tau", c.sac.tau},
            {"target_entropy", c.sac.target_entropy},
            {"initial_alpha", c.sac.initial_alpha},
            {"lambda_bc", c.sac.lambda_bc},
            {"bc_decay", c.sac.bc_decay},
            {"batch", c.sac.batch},
            {"demo_batch", c.sac.demo_batch},
            {"actor_lr", c.sac.actor_lr},
            {"critic_lr", c.sac.critic_lr},
            {"alpha_lr", c.sac.alpha_lr},
            {"hidden", c.sac.hidden},
            {"log_std_min", c.sac.log_std_min},
            {"log_std_max", c.sac.log_std_max},
            {"normalize_actor", c.sac.normalize_actor},
            {"absorbing_success", c.sac.absorbing_success}}},
          {"reward",
           {{"hidden", c.reward.hidden},
            {"batch", c.reward.batch},
            {"lr", c.reward.lr},
            {"steps", c.reward.steps},
            {"clip_norm", c.reward.clip_norm},
            {"weight_decay", c.reward.weight_decay}}}};
}

using cfgjson::reject_unknown;
using cfgjson::take;

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  TrainConfig c;
  std::vector<std::string> seen;
  take(j, "total_steps", c.total_steps, seen);
  take(j, "horizon", c.horizon, seen);
  take(j, "reward_period", c.reward_period, seen);
  take(j, "label_budget", c.label_budget, seen);
  take(j, "reward_retrain_steps", c.reward_retrain_steps, seen);
  take(j, "bc_pretrain_steps", c.bc_pretrain_steps, seen);
  take(j, "learning_starts", c.learning_starts, seen);
  take(j, "critic_warmup", c.critic_warmup, seen);
  take(j, "updates_per_step", c.updates_per_step, seen);
  take(j, "checkpoint_every", c.checkpoint_every, seen);
  take(j, "select_episodes", c.select_episodes, seen);
  take(j, "replay_capacity", c.replay_capacity, seen);
  take(j, "use_demos", c.use_demos, seen);
  seen.emplace_back("randomize");
  seen.emplace_back("sac");
  seen.emplace_back("reward");
  reject_unknown(j, seen, "train.");
  if (j.contains("randomize")) {
    const auto& r = j.at("randomize");
    std::vector<std::string> s;
    take(r, "object_translation", c.randomize.object_translation, s);
    take(r, "ee_sigma", c.randomize.ee_sigma, s);
    take(r, "max_tries", c.randomize.max_tries, s);
    reject_unknown(r, s, "train.randomize.");
  }
  if (j.contains("sac")) {
    const auto& r = j.at("sac");
    std::vector<std::string> s;
    take(r, "gamma", c.sac.gamma, s);
    take(r, "tau", c.sac.tau, s);
    take(r, "target_entropy", c.sac.target_entropy, s);
    take(r, "initial_alpha", c.sac.initial_alpha, s);
    take(r, "lambda_bc", c.sac.lambda_bc, s);
    take(r, "bc_decay", c.sac.bc_decay, s);
    take(r, "batch", c.sac.batch, s);
    take(r, "demo_batch", c.sac.demo_batch, s);
    take(r, "actor_lr", c.sac.actor_lr, s);
    take(r, "critic_lr", c.sac.critic_lr, s);
    take(r, "alpha_lr", c.sac.alpha_lr, s);
    take(r, "hidden", c.sac.hidden, s);
    take(r, "log_std_min", c.sac.log_std_min, s);
    take(r, "log_std_max", c.sac.log_std_max, s);
    take(r, "normalize_actor", c.sac.normalize_actor, s);
    take(r, "absorbing_success", c.sac.absorbing_success, s);
    reject_unknown(r, s, "train.sac.");
  }
  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    std::vector<std::string> s;
    take(r, "hidden", c.reward.hidden, s);
    take(r, "batch", c.reward.batch, s);
    take(r, "lr", c.reward.lr, s);
    take(r, "steps", c.reward.steps, s);
    take(r, "clip_norm", c.reward.clip_norm, s);
    take(r, "weight_decay", c.reward.weight_decay, s);
    reject_unknown(r, s, "train.reward.");
  }
  c.check();
  return c;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream o(path);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o << "step,success_rate,actor_loss,critic_loss,alpha,reward_acc,label_queries\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.6f,%.8g,%.8g,%.8g,%.6f,%llu\n", r.step, r.success_rate, r.actor_loss,
                  r.critic_loss, r.alpha, r.reward_acc, static_cast<unsigned long long>(r.label_queries));
    o << buf;
  }
}

Controller policy_controller(const Policy& policy, const Perception& per) {
  return [&policy, &per](const Observation& ob) {
    Rng unused(0);
    return policy.act(per.policy_obs(ob.views, ob.world), ActMode::deterministic, unused, per.wcfg).action;
  };
}

EvalResult evaluate(const Controller& controller, const std::vector<TrainScene>& scenes, const Perception& per,
                    const EvalConfig& cfg, const RewardModel* feasibility, const GateConfig& gate_cfg) {
  if (cfg.episodes < 1) throw std::invalid_argument("evaluate needs at least one episode");
  if (scenes.empty()) throw std::invalid_argument("evaluate needs at least one scene");
  EvalResult res;
  int wins = 0;
  for (int i = 0; i < cfg.episodes; ++i) {
    const auto& sc = scenes[static_cast<std::size_t>(i) % scenes.size()];
    Rng init = make_rng(cfg.seed, "eval_init", static_cast<std::uint64_t>(i));
    Rng noise = make_rng(cfg.seed, "eval_noise", static_cast<std::uint64_t>(i));
    WorldState w = randomize_init(sc.world, cfg.randomize, init, per.wcfg);
    EpisodeLog log;
    log.scene = sc.id;
    auto views = per.render(w);
    for (int t = 0; t < cfg.horizon; ++t) {
      Action a = controller({w, views, t});
      if (cfg.action_noise > 0.0) {
        for (int k = 0; k < 3; ++k) a.delta_translation[k] += cfg.action_noise * standard_normal(noise);
        a = clamp_action(a, per.wcfg);
      }
      if (feasibility) {
        const auto d = gate(*feasibility, views[0], w.gripper.aperture, a, gate_cfg, per.wcfg);
        log.denied += d.allowed ? 0 : 1;
        a = d.action;
      }
      w = step(w, a, per.wcfg);
      log.steps = t + 1;
      if (task_success(w, sc.task, per.wcfg)) {
        log.success = true;
        break;
      }
      views = per.render(w);
    }
    wins += log.success ? 1 : 0;
    res.episodes.push_back(log);
  }
  res.success_rate = static_cast<double>(wins) / cfg.episodes;
  return res;
}

json eval_to_json(const EvalResult& r) {
  json eps = json::array();
  for (const auto& e : r.episodes) {
    eps.push_back({{"scene", e.scene}, {"success", e.success}, {"steps", e.steps}, {"denied", e.denied}});
  }
  return {{"success_rate", r.success_rate}, {"episodes", r.episodes.size()}, {"episode_log", eps}};
}

namespace {

std::vector<Transition> all_demo_transitions(const std::vector<TrainScene>& scenes, const Perception& per,
                                             const RewardModel& reward) {
  std::vector<Transition> out;
  for (const auto& sc : scenes) {
    auto t = demo_transitions(sc, per, reward);
    out.insert(out.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  return out;
}

void demo_batch(const std::vector<Transition>& demos, int n, Rng& rng, Mat& s, Mat& a, std::vector<int>& grip) {
  const int F = static_cast<int>(demos.at(0).s.size());
  s.resize(F, n);
  a.resize(kContinuousDims, n);
  grip.resize(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) {
    const auto& t = demos[static_cast<std::size_t>(rng() % demos.size())];
    s.col(c) = Eigen::Map<const VecX>(t.s.data(), F);
    for (int i = 0; i < kContinuousDims; ++i) a(i, c) = t.a[static_cast<std::size_t>(i)];
    grip[static_cast<std::size_t>(c)] = t.grip;
  }
}

void pretrain_bc(Policy& policy, const std::vector<Transition>& demos, int steps, int batch, double lr, Rng& rng) {
  if (demos.empty() || steps <= 0) return;
  Adam opt(policy.net, {lr});
  Mat s, a;
  std::vector<int> grip;
  for (int i = 0; i < steps; ++i) {
    demo_batch(demos, batch, rng, s, a, grip);
    bc_update(policy, opt, s, a, grip);
  }
}

std::string step_name(long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%07ld", step);
  return buf;
}

}  // namespace

Policy train_bc_only(const std::vector<TrainScene>& scenes, const Perception& per, const SacConfig& sac, int steps,
                     std::uint64_t seed) {
  RewardModel flat;
  flat.layout = per.layout;
  Rng init = make_rng(seed, "bc_reward");
  flat.net = Mlp({per.layout.dim(), 1}, init);
  const auto demos = all_demo_transitions(scenes, per, flat);
  if (demos.empty()) throw std::invalid_argument("behavior cloning needs demonstration transitions");
  Rng rng = make_rng(seed, "bc_init");
  Policy policy(kPolicyFeatureDim, sac.hidden, rng, sac.log_std_min, sac.log_std_max);
  Rng batch_rng = make_rng(seed, "bc_batch");
  pretrain_bc(policy, demos, steps, std::max(sac.demo_batch, 1), sac.actor_lr, batch_rng);
  return policy;
}

TrainResult run_training(const std::vector<TrainScene>& scenes, const RewardDataset& bootstrap, LabelSource& labels,
                         const Perception& per, const TrainConfig& cfg,
                         const std::optional<std::filesystem::path>& out_dir, const TrainHooks& hooks) {
  cfg.check();
  if (scenes.empty()) throw std::invalid_argument("training needs at least one scene");
  TrainResult res;
  res.reward_data = bootstrap;
  res.reward_data.layout = per.layout;

  RewardTrainConfig rc = cfg.reward;
  rc.seed = derive_seed(cfg.seed, "reward_fit", 0);
  res.reward = train_reward(res.reward_data, rc).model;

  ReplayBuffer buf(cfg.replay_capacity);
  std::vector<Transition> demos;
  if (cfg.use_demos) {
    demos = all_demo_transitions(scenes, per, res.reward);
    for (const auto& t : demos) buf.add(t);
  }
  SacConfig sc = cfg.sac;
  if (!cfg.use_demos) sc.lambda_bc = 0.0;
  SacAgent agent(kPolicyFeatureDim, sc, derive_seed(cfg.seed, "agent", 0));
  Rng bc_rng = make_rng(cfg.seed, "bc_pretrain");
  if (cfg.use_demos) pretrain_bc(agent.policy, demos, cfg.bc_pretrain_steps, std::max(sc.demo_batch, 1), sc.actor_lr, bc_rng);

  Rng scene_rng = make_rng(cfg.seed, "scene_pick");
  Rng init_rng = make_rng(cfg.seed, "randomize");
  Rng act_rng = make_rng(cfg.seed, "act");
  Rng sac_rng = make_rng(cfg.seed, "sac_update");

  if (out_dir) std::filesystem::create_directories(*out_dir / "checkpoints");

  // Episode state.
  const TrainScene* cur = nullptr;
  WorldState w;
  std::vector<IdDepthImage> views;
  std::vector<double> obs;
  int ep_t = 0;
  struct PendingPre {
    FeatureVector x;
    WorldState moved;
  };
  std::optional<PendingPre> pre;
  std::optional<PendingPre> first_state;

  // Window statistics.
  int win_episodes = 0, win_success = 0, win_updates = 0;
  double win_actor = 0.0, win_critic = 0.0;
  int budget = cfg.label_budget;

  double best_success = -1.0;
  Policy best = agent.policy;
  long best_step = 0;

  auto reset = [&] {
    cur = &scenes[static_cast<std::size_t>(scene_rng() % scenes.size())];
    w = randomize_init(cur->world, cfg.randomize, init_rng, per.wcfg);
    views = per.render(w);
    obs = per.policy_obs(views, w);
    ep_t = 0;
    pre.reset();
    first_state.reset();
  };

  auto label = [&](const FeatureVector& x, const WorldState& at, Stage stage) {
    if (budget <= 0) return;
    --budget;
    const auto lab = labels.query(at, cur->task, stage);
    const bool truth = stage == Stage::pre ? ground_truth(at, cur->task, Stage::pre, per.wcfg)
                                           : task_success(at, cur->task, per.wcfg);
    res.reward_data.add(x, lab.label, stage, truth);
  };

  auto checkpoint = [&](long step) {
    json meta = {{"step", step}, {"seed", cfg.seed}};
    if (cfg.select_episodes > 0) {
      EvalConfig ec;
      ec.episodes = cfg.select_episodes;
      ec.horizon = cfg.horizon;
      ec.randomize = cfg.randomize;
      ec.seed = derive_seed(cfg.seed, "select", 0);
      const double s = evaluate(policy_controller(agent.policy, per), scenes, per, ec).success_rate;
      spdlog::info("checkpoint {}: selection success {:.3f}", step, s);
      meta["selection_success"] = s;
      if (s >= best_success) {
        best_success = s;
        best = agent.policy;
        best_step = step;
      }
    }
    if (out_dir) save_agent(*out_dir / "checkpoints" / (step_name(step) + ".bin"), agent, meta);
  };

  reset();
  for (long it = 0; it < cfg.total_steps; ++it) {
    const PolicyAction pa = agent.policy.act(obs, ActMode::stochastic, act_rng, per.wcfg);
    const Action& a = pa.action;
    if (ep_t == 0) first_state = PendingPre{per.reward_obs(views, w, with_command(a, GripperCommand::close)),
                                            moved(w, a, per.wcfg)};
    const FeatureVector x_sa = per.reward_obs(views, w, a);
    if (!pre && a.gripper_command == GripperCommand::close && w.gripper.aperture == Aperture::open) {
      pre = PendingPre{x_sa, moved(w, a, per.wcfg)};
    }
    WorldState w2 = step(w, a, per.wcfg);
    auto views2 = per.render(w2);
    const bool success = task_success(w2, cur->task, per.wcfg);
    ++ep_t;

    Transition tr;
    tr.s = obs;
    tr.s2 = per.policy_obs(views2, w2);
    tr.a = pa.a;
    tr.grip = pa.grip;
    tr.done = success;
    const FeatureVector x = success ? per.reward_obs(views2, w2, Action{}) : x_sa;
    tr.reward_features = pack(x, per.layout);
    tr.reward = res.reward.forward(tr.reward_features.unpack());
    obs = tr.s2;
    buf.add(std::move(tr));

    w = std::move(w2);
    views = std::move(views2);

    if (success || ep_t >= cfg.horizon) {
      ++win_episodes;
      win_success += success ? 1 : 0;
      const auto& first = pre ? *pre : *first_state;
      label(first.x, first.moved, Stage::pre);
      label(per.reward_obs(views, w, Action{}), w, Stage::post);
      reset();
    }

    if (it + 1 >= cfg.learning_starts && buf.size() >= static_cast<std::size_t>(sc.batch)) {
      for (int u = 0; u < cfg.updates_per_step; ++u) {
        const auto d = sac_update(agent, buf, sc, sac_rng, agent.updates >= cfg.critic_warmup);
        win_actor += d.actor_loss;
        win_critic += d.critic_loss;
        ++win_updates;
      }
    }

    const long done_steps = it + 1;
    if (done_steps % cfg.reward_period == 0) {
      RewardTrainConfig rr = cfg.reward;
      rr.steps = cfg.reward_retrain_steps;
      rr.seed = derive_seed(cfg.seed, "reward_fit", static_cast<std::uint64_t>(res.reward_updates + 1));
      res.reward = train_reward(res.reward_data, rr, &res.reward).model;
      relabel(buf, res.reward);
      ++res.reward_updates;
      res.relabel_mismatches += audit_relabel(buf, res.reward);
      if (hooks.after_relabel) hooks.after_relabel(done_steps, buf, res.reward);
      budget = cfg.label_budget;

      MetricsRow row;
      row.step = done_steps;
      row.success_rate = win_episodes ? static_cast<double>(win_success) / win_episodes : 0.0;
      row.actor_loss = win_updates ? win_actor / win_updates : 0.0;
      row.critic_loss = win_updates ? win_critic / win_updates : 0.0;
      row.alpha = agent.alpha();
      row.reward_acc = reward_accuracy(res.reward, res.reward_data);
      row.label_queries = labels.queries;
      res.metrics.push_back(row);
      if (hooks.on_metrics) hooks.on_metrics(row);
      spdlog::info("step {}: success {:.3f} actor {:.4g} critic {:.4g} alpha {:.4g} reward_acc {:.3f} queries {}",
                   row.step, row.success_rate, row.actor_loss, row.critic_loss, row.alpha, row.reward_acc,
                   row.label_queries);
      win_episodes = win_success = win_updates = 0;
      win_actor = win_critic = 0.0;
    }
    if (done_steps % cfg.checkpoint_every == 0 || done_steps == cfg.total_steps) checkpoint(done_steps);
  }
  if (cfg.total_steps == 0) checkpoint(0);

  if (cfg.select_episodes > 0) {
    res.policy = best;
    res.selected_step = best_step;
  } else {
    res.policy = agent.policy;
    res.selected_step = cfg.total_steps;
  }
  if (out_dir) {
    save_agent(*out_dir / "checkpoints" / "final.bin", agent, {{"step", cfg.total_steps}, {"seed", cfg.seed}});
    SacAgent sel = agent;
    sel.policy = res.policy;
    save_agent(*out_dir / "checkpoints" / "selected.bin", sel,
               {{"step", res.selected_step}, {"seed", cfg.seed}, {"selection_success", best_success}});
    save_reward_model(*out_dir / "checkpoints" / "reward.bin", res.reward, "reward");
  }
  return res;
}

}  // namespace prism
