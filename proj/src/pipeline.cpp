#include "prism/pipeline.hpp"

#include "prism/json_config.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

namespace prism {

namespace fs = std::filesystem;
using cfgjson::reject_unknown;
using cfgjson::take;

const char* stage_name(PipelineStage s) {
  switch (s) {
    case PipelineStage::demo_generate: return "demo generate";
    case PipelineStage::scene_ground: return "scene ground";
    case PipelineStage::refine: return "refine";
    case PipelineStage::demo_replay: return "demo replay";
    case PipelineStage::reward_bootstrap: return "reward bootstrap";
    case PipelineStage::policy_train: return "policy train";
    case PipelineStage::policy_eval: return "policy eval";
  }
  return "?";
}

StageError::StageError(std::string s, fs::path a, const std::string& what)
    : std::runtime_error(s + " failed (" + a.string() + "): " + what), stage(std::move(s)), artifact(std::move(a)) {}

// ---- config ----

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) path = base / path;
  if (!fs::exists(path)) throw ConfigError("referenced path does not exist: " + path.string());
  return fs::absolute(path).lexically_normal();
}

json refine_to_json(const RefineConfig& c) {
  return {{"epsilon_g", c.epsilon_g},         {"penalty_rounds", c.penalty_rounds},
          {"penalty_initial", c.penalty_initial}, {"penalty_growth", c.penalty_growth},
          {"restarts", c.restarts},           {"max_sweeps", c.max_sweeps},
          {"initial_step", c.initial_step},   {"initial_yaw_step", c.initial_yaw_step},
          {"min_step", c.min_step},           {"full_trajectory_objective", c.full_trajectory_objective}};
}

void refine_from_json(const json& j, RefineConfig& c) {
  std::vector<std::string> s;
  take(j, "epsilon_g", c.epsilon_g, s);
  take(j, "penalty_rounds", c.penalty_rounds, s);
  take(j, "penalty_initial", c.penalty_initial, s);
  take(j, "penalty_growth", c.penalty_growth, s);
  take(j, "restarts", c.restarts, s);
  take(j, "max_sweeps", c.max_sweeps, s);
  take(j, "initial_step", c.initial_step, s);
  take(j, "initial_yaw_step", c.initial_yaw_step, s);
  take(j, "min_step", c.min_step, s);
  take(j, "full_trajectory_objective", c.full_trajectory_objective, s);
  reject_unknown(j, s, "refine.");
  if (c.epsilon_g <= 0.0 || c.penalty_rounds < 1 || c.restarts < 0 || c.max_sweeps < 1) {
    throw ConfigError("refine: epsilon_g, penalty_rounds and max_sweeps must be positive");
  }
}

}  // namespace

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  std::vector<std::string> seen;
  auto path_key = [&](const char* key, std::optional<fs::path>& dst) {
    std::string p;
    take(j, key, p, seen);
    if (!p.empty()) dst = resolve(base_dir, p);
  };
  path_key("scene", c.scene_path);
  path_key("task", c.task_path);
  path_key("template", c.template_path);
  if (c.scene_path.has_value() != c.task_path.has_value()) throw ConfigError("scene and task paths go together");
  seen.emplace_back("library");
  if (j.contains("library")) {
    const auto& l = j.at("library");
    std::vector<std::string> s;
    std::string fam = to_string(c.family);
    take(l, "family", fam, s);
    take(l, "seed", c.library_seed, s);
    take(l, "jitter", c.library_jitter, s);
    reject_unknown(l, s, "library.");
    try {
      c.family = parse_task_family(fam);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("library.family: ") + e.what());
    }
  }
  take(j, "seed", c.seed, seen);
  take(j, "demos", c.demos, seen);
  take(j, "estimate_translation", c.estimate_translation, seen);
  take(j, "estimate_yaw", c.estimate_yaw, seen);
  take(j, "refine_passes", c.refine_passes, seen);
  take(j, "p_flip", c.p_flip, seen);
  take(j, "label_views", c.label_views, seen);
  take(j, "bc_steps", c.bc_steps, seen);
  take(j, "gate_eval", c.gate_eval, seen);
  take(j, "gate_episodes", c.gate_episodes, seen);
  take(j, "gate_noise", c.gate_noise, seen);
  take(j, "gate_threshold", c.gate.threshold, seen);
  take(j, "min_success", c.min_success, seen);
  seen.insert(seen.end(), {"refine", "train", "eval", "study"});
  reject_unknown(j, seen, "");
  if (j.contains("refine")) refine_from_json(j.at("refine"), c.refine);
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    std::vector<std::string> s;
    take(e, "episodes", c.eval.episodes, s);
    take(e, "horizon", c.eval.horizon, s);
    reject_unknown(e, s, "eval.");
  }
  if (j.contains("study")) {
    const auto& e = j.at("study");
    std::vector<std::string> s;
    take(e, "trials", c.study.trials, s);
    take(e, "k_max", c.study.k_max, s);
    take(e, "majority", c.study.majority, s);
    take(e, "p_flip", c.study.err.p_flip, s);
    reject_unknown(e, s, "study.");
  }

  if (c.seed < 1) throw ConfigError("seed must be >= 1");
  if (c.demos < 1) throw ConfigError("demos must be >= 1");
  if (c.estimate_translation < 0.0 || c.estimate_yaw < 0.0) throw ConfigError("estimate noise must be >= 0");
  if (c.refine_passes < 1) throw ConfigError("refine_passes must be >= 1");
  if (c.label_views < 1 || c.label_views > 5) throw ConfigError("label_views must be in 1..5");
  if (c.bc_steps < 0 || c.gate_episodes < 1 || c.gate_noise < 0.0) throw ConfigError("bad eval settings");
  if (c.eval.episodes < 1 || c.eval.horizon < 1) throw ConfigError("eval episodes and horizon must be positive");
  if (c.study.trials < 100 || c.study.k_max < 1 || c.study.k_max > 5) {
    throw ConfigError("study: trials >= 100 and k_max in 1..5");
  }
  OracleErrorModel{c.p_flip, 0}.check();
  c.study.err.check();
  c.train.check();
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j = {{"seed", c.seed},
            {"library", {{"family", to_string(c.family)}, {"seed", c.library_seed}, {"jitter", c.library_jitter}}},
            {"demos", c.demos},
            {"estimate_translation", c.estimate_translation},
            {"estimate_yaw", c.estimate_yaw},
            {"refine_passes", c.refine_passes},
            {"refine", refine_to_json(c.refine)},
            {"p_flip", c.p_flip},
            {"label_views", c.label_views},
            {"train", train_config_to_json(c.train)},
            {"eval", {{"episodes", c.eval.episodes}, {"horizon", c.eval.horizon}}},
            {"bc_steps", c.bc_steps},
            {"gate_eval", c.gate_eval},
            {"gate_episodes", c.gate_episodes},
            {"gate_noise", c.gate_noise},
            {"gate_threshold", c.gate.threshold},
            {"min_success", c.min_success},
            {"study",
             {{"trials", c.study.trials},
              {"k_max", c.study.k_max},
              {"majority", c.study.majority},
              {"p_flip", c.study.err.p_flip}}}};
  if (c.scene_path) j["scene"] = c.scene_path->string();
  if (c.task_path) j["task"] = c.task_path->string();
  if (c.template_path) j["template"] = c.template_path->string();
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  const json j = read_json_file(path);
  try {
    return run_config_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string config_hash(const RunConfig& c) {
  const std::string s = run_config_to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- reward dataset files ----

namespace {

constexpr char kDatasetMagic[8] = {'P', 'R', 'D', 'S', 'E', 'T', '0', '1'};

template <class T>
void put(std::ostream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void get(std::istream& in, T& v, const fs::path& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ConfigError(path.string() + ": truncated dataset");
}

}  // namespace

void save_reward_dataset(const fs::path& path, const RewardDataset& ds) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o.write(kDatasetMagic, sizeof kDatasetMagic);
  const std::string layout = layout_to_json(ds.layout).dump();
  put(o, static_cast<std::uint64_t>(layout.size()));
  o.write(layout.data(), static_cast<std::streamsize>(layout.size()));
  put(o, static_cast<std::uint64_t>(ds.records.size()));
  for (const auto& r : ds.records) {
    put(o, static_cast<std::int32_t>(r.label));
    put(o, static_cast<std::int32_t>(r.stage == Stage::pre ? 0 : 1));
    put(o, static_cast<std::int32_t>(r.truth ? 1 : 0));
    put(o, r.weight);
    for (double t : r.x.tail) put(o, t);
    put(o, static_cast<std::uint64_t>(r.x.grid.size()));
    o.write(reinterpret_cast<const char*>(r.x.grid.data()), static_cast<std::streamsize>(r.x.grid.size()));
  }
  if (!o) throw std::runtime_error("write failed: " + path.string());
}

RewardDataset load_reward_dataset(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open dataset");
  char magic[sizeof kDatasetMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kDatasetMagic, sizeof magic) != 0) throw ConfigError(path.string() + ": bad magic");
  RewardDataset ds;
  std::uint64_t n = 0;
  get(in, n, path);
  if (n > (1u << 20)) throw ConfigError(path.string() + ": corrupt layout header");
  std::string layout(n, '\0');
  in.read(layout.data(), static_cast<std::streamsize>(n));
  try {
    ds.layout = layout_from_json(json::parse(layout));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": corrupt layout: " + e.what());
  }
  get(in, n, path);
  const auto cells = static_cast<std::uint64_t>(ds.layout.image_dim());
  for (std::uint64_t i = 0; i < n; ++i) {
    RewardRecord r;
    std::int32_t label = 0, stage = 0, truth = 0;
    get(in, label, path);
    get(in, stage, path);
    get(in, truth, path);
    get(in, r.weight, path);
    for (double& t : r.x.tail) get(in, t, path);
    std::uint64_t g = 0;
    get(in, g, path);
    if (g != cells) throw ConfigError(path.string() + ": record size does not match the layout");
    r.x.grid.resize(g);
    in.read(reinterpret_cast<char*>(r.x.grid.data()), static_cast<std::streamsize>(g));
    if (!in) throw ConfigError(path.string() + ": truncated dataset");
    r.label = label;
    r.stage = stage == 0 ? Stage::pre : Stage::post;
    r.truth = truth != 0;
    ds.records.push_back(std::move(r));
  }
  return ds;
}

// ---- stages ----

namespace {

struct Files {
  fs::path dir;
  fs::path manifest() const { return dir / "manifest.json"; }
  fs::path truth() const { return dir / "truth_scene.json"; }
  fs::path task() const { return dir / "task.json"; }
  fs::path demo(int i) const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "demo_%02d.json", i);
    return dir / "demos" / buf;
  }
  fs::path estimates() const { return dir / "estimates.json"; }
  fs::path ground() const { return dir / "ground_scene.json"; }
  fs::path refined() const { return dir / "refined_scene.json"; }
  fs::path refine_report() const { return dir / "refine_report.json"; }
  fs::path replay() const { return dir / "replay_report.json"; }
  fs::path bootstrap() const { return dir / "reward" / "bootstrap_dataset.bin"; }
  fs::path bootstrap_summary() const { return dir / "reward" / "bootstrap.json"; }
  fs::path dataset() const { return dir / "reward" / "dataset.bin"; }
  fs::path reward_model() const { return dir / "reward" / "reward_model.bin"; }
  fs::path feasibility() const { return dir / "reward" / "feasibility.bin"; }
  fs::path checkpoints() const { return dir / "checkpoints"; }
  fs::path metrics() const { return dir / "metrics.csv"; }
  fs::path train_summary() const { return dir / "train_summary.json"; }
  fs::path eval() const { return dir / "eval.json"; }
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json pose_estimates_to_json(const std::vector<PoseEstimate>& est) {
  json a = json::array();
  for (const auto& e : est) {
    a.push_back({{"object_id", e.object_id},
                 {"pose", pose_to_json(e.pose)},
                 {"translation_noise_scale", e.translation_noise_scale},
                 {"yaw_noise_scale", e.yaw_noise_scale}});
  }
  return a;
}

std::vector<PoseEstimate> pose_estimates_from_json(const json& j) {
  std::vector<PoseEstimate> out;
  for (const auto& e : j) {
    PoseEstimate p;
    p.object_id = e.at("object_id").get<int>();
    p.pose = pose_from_json(e.at("pose"));
    p.translation_noise_scale = e.at("translation_noise_scale").get<double>();
    p.yaw_noise_scale = e.at("yaw_noise_scale").get<double>();
    out.push_back(p);
  }
  return out;
}

class Runner {
 public:
  Runner(const RunConfig& cfg, const fs::path& dir) : cfg_(cfg), f_{dir} {}

  void run(PipelineStage s) {
    switch (s) {
      case PipelineStage::demo_generate: return demo_generate();
      case PipelineStage::scene_ground: return scene_ground();
      case PipelineStage::refine: return refine_stage();
      case PipelineStage::demo_replay: return demo_replay();
      case PipelineStage::reward_bootstrap: return reward_bootstrap();
      case PipelineStage::policy_train: return policy_train();
      case PipelineStage::policy_eval: return policy_eval();
    }
  }

  std::optional<double> eval_success;

 private:
  const RunConfig& cfg_;
  Files f_;
  std::string stage_;

  std::uint64_t seed(const char* name, std::uint64_t i = 0) const { return derive_seed(cfg_.seed, name, i); }

  [[noreturn]] void fail(const fs::path& artifact, const std::string& what) const {
    throw StageError(stage_, artifact, what);
  }

  json read(const fs::path& p) const {
    try {
      return read_json_file(p);
    } catch (const ConfigError& e) {
      fail(p, e.what());
    }
  }

  template <class F>
  auto parse(const fs::path& p, F&& fn) const {
    const json j = read(p);
    try {
      return fn(j);
    } catch (const std::exception& e) {
      fail(p, e.what());
    }
  }

  QueryTemplate query_template(const TaskSpec& task) const {
    if (!cfg_.template_path) return default_template(skill_for(task.family));
    return parse(*cfg_.template_path, [](const json& j) { return template_from_json(j); });
  }

  TaskScene truth() const {
    TaskScene ts;
    ts.scene = parse(f_.truth(), [](const json& j) { return scene_from_json(j); });
    ts.task = parse(f_.task(), [](const json& j) { return task_from_json(j); });
    return ts;
  }

  std::vector<Demonstration> demos() const {
    std::vector<Demonstration> out;
    for (int i = 0; i < cfg_.demos; ++i) {
      out.push_back(parse(f_.demo(i), [](const json& j) { return demo_from_json(j, std::nullopt); }));
    }
    return out;
  }

  Scene refined() const { return parse(f_.refined(), [](const json& j) { return scene_from_json(j); }); }

  std::vector<TrainScene> train_scenes(const WorldState& world, const TaskSpec& task) const {
    std::vector<TrainScene> out;
    const auto ds = demos();
    for (std::size_t i = 0; i < ds.size(); ++i) {
      out.push_back({ds[i].id, world, task, map_to_sim(ds[i], world)});
    }
    return out;
  }

  LabelSource label_source(const TaskSpec& task, const std::vector<Camera>& cams) const {
    std::vector<Camera> views(cams.begin(), cams.begin() + std::min<std::size_t>(cams.size(), cfg_.label_views));
    return LabelSource{query_template(task), views, OracleErrorModel{cfg_.p_flip, seed("oracle")}};
  }

  TrainConfig train_config() const {
    TrainConfig t = cfg_.train;
    t.seed = seed("train");
    return t;
  }

  void demo_generate() {
    stage_ = "demo generate";
    TaskScene ts;
    if (cfg_.scene_path) {
      try {
        ts.scene = load_scene(*cfg_.scene_path);
        ts.task = load_task(*cfg_.task_path);
      } catch (const ConfigError& e) {
        fail(*cfg_.scene_path, e.what());
      }
      ts.scene.world = settle(ts.scene.world);
      if (ts.scene.cameras.empty()) ts.scene.cameras = default_cameras();
    } else {
      ts = make_task_scene(cfg_.family, cfg_.library_seed, cfg_.library_jitter);
    }
    write_json_file(f_.truth(), scene_to_json(ts.scene));
    write_json_file(f_.task(), task_to_json(ts.task));
    ScriptConfig sc;
    sc.render = false;
    for (int i = 0; i < cfg_.demos; ++i) {
      Demonstration d;
      try {
        d = generate_scripted_demo(ts, seed("demo", static_cast<std::uint64_t>(i)), sc);
      } catch (const std::exception& e) {
        fail(f_.demo(i), e.what());
      }
      char id[16];
      std::snprintf(id, sizeof id, "demo_%02d", i);
      d.id = id;
      write_json_file(f_.demo(i), demo_to_json(d, std::nullopt));
    }
    spdlog::info("demo generate: {} demonstrations of {}", cfg_.demos, to_string(ts.task.family));
  }

  void scene_ground() {
    stage_ = "scene ground";
    const TaskScene ts = truth();
    const auto est = noisy_estimates(ts.scene.world, cfg_.estimate_translation, cfg_.estimate_yaw, seed("ground"));
    write_json_file(f_.estimates(), pose_estimates_to_json(est));
    write_json_file(f_.ground(), scene_to_json(Scene{apply_estimates(ts.scene.world, est), ts.scene.cameras}));
    spdlog::info("scene ground: {} pose estimates", est.size());
  }

  void refine_stage() {
    stage_ = "refine";
    const TaskScene ts = truth();
    auto est = parse(f_.estimates(), [](const json& j) { return pose_estimates_from_json(j); });
    const auto ds = demos();
    json report = json::array();
    // Each demo refines from the previous result until one pass leaves every demo feasible.
    bool all_ok = false;
    for (int pass = 0; pass < cfg_.refine_passes && !all_ok; ++pass) {
      all_ok = true;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        RefineConfig rc = cfg_.refine;
        rc.seed = seed("refine", static_cast<std::uint64_t>(pass * 1000 + static_cast<int>(i)));
        const auto pb = make_problem(ts.scene.world, est, ds[i], rc);
        if (pass > 0 && validate(est, pb).empty()) continue;
        const auto r = refine(pb);
        json entry = refinement_result_to_json(r);
        entry["demo"] = ds[i].id;
        entry["pass"] = pass;
        report.push_back(entry);
        if (!r.feasible) {
          write_json_file(f_.refine_report(), report);
          fail(f_.demo(static_cast<int>(i)), "refinement infeasible with " + std::to_string(r.violations.size()) +
                                                 " violations");
        }
        est = r.poses;
      }
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!validate(est, make_problem(ts.scene.world, est, ds[i], cfg_.refine)).empty()) all_ok = false;
      }
    }
    write_json_file(f_.refine_report(), report);
    if (!all_ok) fail(f_.refine_report(), "no pose set satisfies every demonstration");
    write_json_file(f_.refined(), scene_to_json(Scene{apply_estimates(ts.scene.world, est), ts.scene.cameras}));
    spdlog::info("refine: feasible for {} demonstrations", ds.size());
  }

  void demo_replay() {
    stage_ = "demo replay";
    const Scene sc = refined();
    const TaskScene ts = truth();
    bool ok = true;
    json reports = json::array();
    for (const auto& d : demos()) {
      const auto cons = extract_key_states(d, sc.world, cfg_.refine.epsilon_g);
      const auto rep = replay_report(map_to_sim(d, sc.world), cons, ts.task);
      json r = replay_report_to_json(rep);
      r["demo"] = d.id;
      reports.push_back(r);
      ok = ok && rep.success;
    }
    write_json_file(f_.replay(), {{"success", ok}, {"demos", reports}});
    if (!ok) fail(f_.replay(), "a demonstration does not replay in the refined scene");
    spdlog::info("demo replay: all {} demonstrations succeed", reports.size());
  }

  void reward_bootstrap() {
    stage_ = "reward bootstrap";
    const Scene sc = refined();
    const TaskScene ts = truth();
    const auto scenes = train_scenes(sc.world, ts.task);
    const Perception per(sc.cameras, ts.task);
    LabelSource labels = label_source(ts.task, sc.cameras);
    RewardDataset ds;
    bootstrap_reward_dataset(scenes, per, labels, ds);
    int pos = 0;
    for (const auto& r : ds.records) pos += r.label;
    save_reward_dataset(f_.bootstrap(), ds);
    write_json_file(f_.bootstrap_summary(),
                    {{"records", ds.records.size()}, {"positives", pos}, {"label_queries", labels.queries}});
    spdlog::info("reward bootstrap: {} records, {} positive", ds.records.size(), pos);
  }

  void policy_train() {
    stage_ = "policy train";
    const Scene sc = refined();
    const TaskScene ts = truth();
    const auto scenes = train_scenes(sc.world, ts.task);
    const Perception per(sc.cameras, ts.task);
    LabelSource labels = label_source(ts.task, sc.cameras);
    labels.queries = parse(f_.bootstrap_summary(), [](const json& j) { return j.at("label_queries").get<std::uint64_t>(); });
    RewardDataset boot;
    try {
      boot = load_reward_dataset(f_.bootstrap());
    } catch (const ConfigError& e) {
      fail(f_.bootstrap(), e.what());
    }
    const TrainConfig tc = train_config();
    TrainResult res;
    try {
      res = run_training(scenes, boot, labels, per, tc, f_.dir);
    } catch (const std::exception& e) {
      fail(f_.checkpoints(), e.what());
    }
    write_metrics_csv(f_.metrics(), res.metrics);
    save_reward_dataset(f_.dataset(), res.reward_data);
    save_reward_model(f_.reward_model(), res.reward, "reward");
    json ckpts = json::array();
    for (long s = tc.checkpoint_every; s <= tc.total_steps; s += tc.checkpoint_every) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "step_%07ld.bin", s);
      ckpts.push_back({{"step", s}, {"file", buf}});
    }
    write_json_file(f_.checkpoints() / "manifest.json",
                    {{"format", "prism-forge checkpoint v1"},
                     {"checkpoints", ckpts},
                     {"final", "final.bin"},
                     {"selected", "selected.bin"},
                     {"selected_step", res.selected_step},
                     {"reward", "reward.bin"}});
    write_json_file(f_.train_summary(), {{"selected_step", res.selected_step},
                                         {"relabel_mismatches", res.relabel_mismatches},
                                         {"reward_updates", res.reward_updates},
                                         {"label_queries", labels.queries},
                                         {"reward_records", res.reward_data.records.size()}});
    spdlog::info("policy train: {} steps, selected checkpoint {}", tc.total_steps, res.selected_step);
  }

  void policy_eval() {
    stage_ = "policy eval";
    const Scene sc = refined();
    const TaskScene ts = truth();
    const Perception per(sc.cameras, ts.task);
    // Evaluation runs in the ground-truth scene, the stand-in for the real world.
    const auto eval_scenes = train_scenes(ts.scene.world, ts.task);
    Policy policy;
    try {
      policy = load_policy(f_.checkpoints() / "selected.bin");
    } catch (const std::exception& e) {
      fail(f_.checkpoints() / "selected.bin", e.what());
    }
    EvalConfig ec = cfg_.eval;
    ec.randomize = cfg_.train.randomize;
    ec.seed = seed("eval");
    const EvalResult main = evaluate(policy_controller(policy, per), eval_scenes, per, ec);
    json out = {{"task", to_string(ts.task.family)}, {"policy", eval_to_json(main)}};
    eval_success = main.success_rate;
    spdlog::info("policy eval: success {:.3f} over {} episodes", main.success_rate, ec.episodes);

    if (cfg_.bc_steps > 0) {
      const auto scenes = train_scenes(sc.world, ts.task);
      const Policy bc = train_bc_only(scenes, per, cfg_.train.sac, cfg_.bc_steps, seed("bc_only"));
      const EvalResult r = evaluate(policy_controller(bc, per), eval_scenes, per, ec);
      out["bc_only"] = eval_to_json(r);
      spdlog::info("policy eval: BC-only success {:.3f}", r.success_rate);
    }
    if (cfg_.gate_eval) {
      RewardDataset ds;
      try {
        ds = load_reward_dataset(f_.dataset());
      } catch (const ConfigError& e) {
        fail(f_.dataset(), e.what());
      }
      RewardTrainConfig rc = cfg_.train.reward;
      rc.seed = seed("feasibility");
      const RewardModel feas = derive_feasibility(ds, rc).model;
      save_reward_model(f_.feasibility(), feas, "feasibility");
      EvalConfig nc = ec;
      nc.episodes = cfg_.gate_episodes;
      nc.action_noise = cfg_.gate_noise;
      nc.seed = seed("gate_eval");
      const auto ctl = policy_controller(policy, per);
      const EvalResult un = evaluate(ctl, eval_scenes, per, nc);
      const EvalResult ga = evaluate(ctl, eval_scenes, per, nc, &feas, cfg_.gate);
      out["noisy_ungated"] = eval_to_json(un);
      out["noisy_gated"] = eval_to_json(ga);
      out["gate_noise"] = cfg_.gate_noise;
      spdlog::info("policy eval: noisy success ungated {:.3f}, gated {:.3f}", un.success_rate, ga.success_rate);
    }
    write_json_file(f_.eval(), out);
  }
};

json read_manifest(const Files& f) {
  if (!fs::exists(f.manifest())) return json();
  return read_json_file(f.manifest());
}

}  // namespace

PipelineOutcome run_pipeline(const RunConfig& cfg, const PipelineOptions& opt, PipelineStage last) {
  const Files f{opt.run_dir};
  fs::create_directories(f.dir);
  const std::string hash = config_hash(cfg);
  json man = read_manifest(f);
  if (!man.is_null()) {
    if (man.value("config_hash", std::string()) != hash) {
      throw ConfigError(f.manifest().string() + ": run directory belongs to a different config (hash " +
                        man.value("config_hash", std::string("?")) + ", expected " + hash + ")");
    }
  }
  std::vector<bool> done(kStageCount, false);
  if (man.is_object() && man.contains("stages")) {
    int i = 0;
    for (const auto& s : man.at("stages")) {
      if (i < kStageCount) done[static_cast<std::size_t>(i)] = s.value("complete", false);
      ++i;
    }
  }
  // Completion flags must form a prefix.
  for (int i = 1; i < kStageCount; ++i) {
    if (done[static_cast<std::size_t>(i)] && !done[static_cast<std::size_t>(i - 1)]) {
      throw ConfigError(f.manifest().string() + ": stage flags out of order");
    }
  }
  const bool complete_to_last = done[static_cast<std::size_t>(last)];
  const bool any = std::find(done.begin(), done.end(), true) != done.end();
  if (any && !complete_to_last && !opt.resume) {
    spdlog::info("partial run in {}; restarting (pass --resume to continue)", f.dir.string());
    std::fill(done.begin(), done.end(), false);
  }

  if (!man.is_object()) man = json::object();
  man["config_hash"] = hash;
  man["versions"] = {{"prism_forge", "0.1.0"}, {"checkpoint", 1}, {"reward_dataset", 1}};
  man["config"] = run_config_to_json(cfg);
  json stages = json::array();
  for (int i = 0; i < kStageCount; ++i) {
    json s = {{"name", stage_name(static_cast<PipelineStage>(i))}, {"complete", bool(done[static_cast<std::size_t>(i)])}};
    if (done[static_cast<std::size_t>(i)] && man.contains("stages") && man["stages"].size() > static_cast<std::size_t>(i)) {
      s["completed_at"] = man["stages"][static_cast<std::size_t>(i)].value("completed_at", std::string());
    }
    stages.push_back(s);
  }
  man["stages"] = stages;

  PipelineOutcome out;
  Runner runner(cfg, f.dir);
  for (int i = 0; i <= static_cast<int>(last); ++i) {
    const auto st = static_cast<PipelineStage>(i);
    if (done[static_cast<std::size_t>(i)]) {
      out.skipped.emplace_back(stage_name(st));
      continue;
    }
    spdlog::info("stage {}", stage_name(st));
    runner.run(st);
    man["stages"][static_cast<std::size_t>(i)]["complete"] = true;
    man["stages"][static_cast<std::size_t>(i)]["completed_at"] = utc_now();
    write_json_file(f.manifest(), man);
    out.executed.emplace_back(stage_name(st));
  }
  write_json_file(f.manifest(), man);
  if (runner.eval_success) {
    out.eval_success = runner.eval_success;
  } else if (last == PipelineStage::policy_eval && fs::exists(f.eval())) {
    const json e = read_json_file(f.eval());
    out.eval_success = e.at("policy").at("success_rate").get<double>();
  }
  return out;
}

// ---- study ----

json run_view_study(const RunConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto cams = default_cameras();
  json summary = {{"trials", cfg.study.trials}, {"p_flip", cfg.study.err.p_flip}, {"skills", json::object()}};
  for (const auto s : {SkillFamily::pick, SkillFamily::place, SkillFamily::insert, SkillFamily::stack}) {
    StudyConfig sc = cfg.study;
    sc.err.seed = derive_seed(cfg.seed, "study", static_cast<std::uint64_t>(s));
    const auto rows = view_count_study(s, cams, default_template(s), sc);
    write_study_csv(out_dir / (to_string(s) + ".csv"), rows);
    json r = json::array();
    bool monotone = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      r.push_back({{"k", rows[i].k}, {"correct", rows[i].correct}, {"incorrect", rows[i].incorrect},
                   {"accuracy", rows[i].accuracy}});
      if (i > 0 && rows[i].accuracy < rows[i - 1].accuracy) monotone = false;
    }
    summary["skills"][to_string(s)] = {{"rows", r}, {"non_decreasing", monotone}};
    spdlog::info("study views: {} accuracy k=1 {:.3f} k={} {:.3f}", to_string(s), rows.front().accuracy,
                 rows.back().k, rows.back().accuracy);
  }
  write_json_file(out_dir / "summary.json", summary);
  return summary;
}

// ---- plots ----

json emit_plots(const fs::path& run_dir) {
  const Files f{run_dir};
  std::vector<std::string> missing;
  if (!fs::exists(f.metrics())) missing.push_back(f.metrics().string());
  if (!fs::exists(f.eval())) missing.push_back(f.eval().string());
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw StageError("plot emit", run_dir, "missing inputs: " + list);
  }

  json curve = {{"x", "step"}, {"y", "success_rate"}, {"step", json::array()}, {"success_rate", json::array()}};
  {
    std::ifstream in(f.metrics());
    std::string line;
    std::getline(in, line);
    if (line.rfind("step,success_rate", 0) != 0) throw StageError("plot emit", f.metrics(), "unexpected header");
    int row = 1;
    while (std::getline(in, line)) {
      ++row;
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string step, rate;
      std::getline(ss, step, ',');
      std::getline(ss, rate, ',');
      try {
        curve["step"].push_back(std::stol(step));
        curve["success_rate"].push_back(std::stod(rate));
      } catch (const std::exception&) {
        throw StageError("plot emit", f.metrics(), "malformed row " + std::to_string(row));
      }
    }
  }

  json bars = json::object();
  const fs::path study = run_dir / "study" / "summary.json";
  if (fs::exists(study)) {
    const json s = read_json_file(study);
    for (const auto& [skill, v] : s.at("skills").items()) {
      json k = json::array(), acc = json::array();
      for (const auto& r : v.at("rows")) {
        k.push_back(r.at("k"));
        acc.push_back(r.at("accuracy"));
      }
      bars[skill] = {{"k", k}, {"accuracy", acc}};
    }
  }

  const json ev = read_json_file(f.eval());
  json table = json::array();
  auto row = [&](const char* key, const char* name, const char* noise) {
    if (!ev.contains(key)) return;
    table.push_back({{"method", name},
                     {"condition", noise},
                     {"success_rate", ev.at(key).at("success_rate")},
                     {"episodes", ev.at(key).at("episodes")}});
  };
  row("policy", "BC-SAC", "clean");
  row("bc_only", "BC only", "clean");
  if (ev.contains("noisy_gated") && ev.contains("noisy_ungated")) {
    row("noisy_ungated", "BC-SAC without feasibility gate", "action noise");
    row("noisy_gated", "BC-SAC with feasibility gate", "action noise");
  }

  const json out = {{"schema", "prism-forge/plots/v1"},
                    {"success_curve", curve},
                    {"view_count", bars},
                    {"ablation", table}};
  write_json_file(run_dir / "plots" / "summary.json", out);
  return out;
}

}  // namespace prism
