// Acceptance checks: one PASS/FAIL line per criterion. Exit status is nonzero when any selected criterion fails.
//   acceptance            run all
//   acceptance 1 4 9      run a subset

#include "gradcheck.hpp"
#include "oracles.hpp"

#include "prism/demo.hpp"
#include "prism/library.hpp"
#include "prism/oracle.hpp"
#include "prism/pipeline.hpp"
#include "prism/raster.hpp"
#include "prism/refine.hpp"
#include "prism/scene_io.hpp"

#include <omp.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>

using namespace prism;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1: rasterizer vs brute-force ray casting.
Outcome criterion_1() {
  Rng rng = make_rng(101, "acceptance_raster");
  const auto cams = default_cameras();
  long mismatches = 0;
  long pixels = 0;
  double worst = 0.0;
  for (int s = 0; s < 200; ++s) {
    const auto items = oracle_ref::random_items(rng, 5);
    const Camera& cam = cams[static_cast<std::size_t>(s) % cams.size()];
    const auto img = rasterize(items, cam);
    for (int v = 0; v < cam.height; ++v) {
      for (int u = 0; u < cam.width; ++u) {
        const auto ref = oracle_ref::brute_pixel(items, cam, u, v);
        const double err = std::abs(ref.depth - img.depth_at(u, v));
        ++pixels;
        if (ref.id != img.id_at(u, v) || err > 1e-6) {
          ++mismatches;
        } else {
          worst = std::max(worst, err);
        }
      }
    }
  }
  return {mismatches == 0, fmt("%ld/%ld pixels mismatched, max depth error %.2e m", mismatches, pixels, worst)};
}

// 2: refinement soundness on noisy lift/stack scenes.
Outcome criterion_2() {
  int feasible = 0;
  int unsound = 0;
  const int n = 50;
  ScriptConfig sc;
  sc.render = false;
  for (int i = 0; i < n; ++i) {
    const auto family = i % 2 == 0 ? TaskFamily::lift : TaskFamily::stack;
    const auto seed = static_cast<std::uint64_t>(1000 + i);
    const auto ts = make_task_scene(family, seed, 0.03);
    const auto demo = generate_scripted_demo(ts, seed, sc);
    RefineConfig cfg;
    cfg.seed = seed;
    const auto est = noisy_estimates(ts.scene.world, 0.05, 0.1, seed);
    const auto pb = make_problem(ts.scene.world, est, demo, cfg);
    const auto r = refine(pb);
    if (!r.feasible) {
      spdlog::info("criterion 2: {} seed {} infeasible ({} violations, first {})", to_string(family), seed,
                   r.violations.size(), r.violations.empty() ? "" : r.violations.front().kind);
      continue;
    }
    ++feasible;
    const auto w = apply_estimates(pb.base, r.poses);
    if (!replay_report(map_to_sim(demo, w), pb.constraints, ts.task).success) ++unsound;
  }
  const double rate = static_cast<double>(feasible) / n;
  return {rate >= 0.95 && unsound == 0, fmt("feasible %d/%d (%.2f, need >= 0.95), unsound %d", feasible, n, rate, unsound)};
}

// 3: noiseless 4-view labels equal the 3D predicate on ambiguity-free scenes.
Outcome criterion_3() {
  auto cams = default_cameras();
  cams.resize(4);
  const auto five = default_cameras();
  const SkillFamily skills[] = {SkillFamily::pick, SkillFamily::place, SkillFamily::insert, SkillFamily::stack};
  int agree = 0, total = 0, positives = 0;
  std::string first_miss;
  for (int i = 0; i < 500; ++i) {
    const SkillFamily s = skills[i % 4];
    const bool positive = (i / 4) % 2 == 0;
    const auto tmpl = default_template(s);
    const auto sc = make_study_scene(s, positive, -1, five, tmpl, 303, static_cast<std::uint64_t>(i));
    if (!sc) return {false, fmt("scene %d could not be generated", i)};
    const auto rels = bind_relations(sc->stage == Stage::pre ? tmpl.pre_task : tmpl.post_task, sc->task);
    const auto rec = evaluate_views(sc->world, cams, rels);
    ++total;
    positives += sc->truth ? 1 : 0;
    if ((rec.label == 1) == sc->truth) {
      ++agree;
    } else if (first_miss.empty()) {
      first_miss = fmt(" first miss: scene %d (%s, truth %d)", i, to_string(s).c_str(), sc->truth ? 1 : 0);
    }
  }
  return {agree == total, fmt("%d/%d agree (%d positives)%s", agree, total, positives, first_miss.c_str())};
}

// 4: accuracy non-decreasing in k on the depth-ambiguity benchmark, with a gain of at least 0.10 from k=1 to k=4.
Outcome criterion_4() {
  const auto cams = default_cameras();
  bool ok = true;
  std::string detail;
  for (SkillFamily s : {SkillFamily::pick, SkillFamily::place, SkillFamily::insert, SkillFamily::stack}) {
    StudyConfig cfg;
    cfg.trials = 500;
    cfg.err = {0.05, 404};
    const auto rows = view_count_study(s, cams, default_template(s), cfg);
    bool mono = true;
    for (std::size_t k = 1; k < rows.size(); ++k) mono = mono && rows[k].accuracy >= rows[k - 1].accuracy;
    const double gain = rows[3].accuracy - rows[0].accuracy;
    ok = ok && mono && gain >= 0.10;
    detail += fmt("%s[", to_string(s).c_str());
    for (const auto& r : rows) detail += fmt("%.3f%s", r.accuracy, r.k == static_cast<int>(rows.size()) ? "" : " ");
    detail += fmt("] gain %.3f%s; ", gain, mono ? "" : " NOT monotone");
  }
  return {ok, detail};
}

// 5: analytic gradients of every network loss against central differences.
Outcome criterion_5() {
  double worst = 0.0;
  std::size_t checked = 0;
  std::string where;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto r = gradcheck::check_config(seed);
    checked += r.checked;
    if (r.max_rel > worst) {
      worst = r.max_rel;
      where = fmt("seed %llu %s", static_cast<unsigned long long>(seed), r.worst.c_str());
    }
  }
  return {worst <= 1e-4, fmt("max relative error %.3e over %zu partials (need <= 1e-4); worst at %s", worst, checked,
                             where.c_str())};
}

namespace fs = std::filesystem;

fs::path work_dir(const char* name) { return fs::path(PRISM_BINARY_DIR) / "acceptance_runs" / name; }

RunConfig lift_config() { return load_run_config(fs::path(PRISM_SOURCE_DIR) / "configs" / "lift.json"); }

// Scenes and perception for the lift task as the pipeline builds them, from a run directory.
struct RunScenes {
  Scene refined;
  TaskScene truth;
  std::vector<TrainScene> train, eval;
};

RunScenes load_run_scenes(const fs::path& dir, int demos) {
  RunScenes r;
  r.refined = scene_from_json(read_json_file(dir / "refined_scene.json"));
  r.truth.scene = scene_from_json(read_json_file(dir / "truth_scene.json"));
  r.truth.task = task_from_json(read_json_file(dir / "task.json"));
  for (int i = 0; i < demos; ++i) {
    const auto d = demo_from_json(read_json_file(dir / "demos" / fmt("demo_%02d.json", i)), std::nullopt);
    r.train.push_back({d.id, r.refined.world, r.truth.task, map_to_sim(d, r.refined.world)});
    r.eval.push_back({d.id, r.truth.scene.world, r.truth.task, map_to_sim(d, r.truth.scene.world)});
  }
  return r;
}

// 6: after every reward update in a 10k-step run, every stored reward equals the model output on its features.
Outcome criterion_6() {
  RunConfig cfg = lift_config();
  const fs::path dir = work_dir("c6");
  fs::remove_all(dir);
  run_pipeline(cfg, {dir, false}, PipelineStage::reward_bootstrap);
  const auto rs = load_run_scenes(dir, cfg.demos);
  const Perception per(rs.refined.cameras, rs.truth.task);
  std::vector<Camera> views(rs.refined.cameras.begin(), rs.refined.cameras.begin() + cfg.label_views);
  LabelSource labels{default_template(skill_for(rs.truth.task.family)), views, {cfg.p_flip, 6}};
  const RewardDataset boot = load_reward_dataset(dir / "reward" / "bootstrap_dataset.bin");
  TrainConfig tc = cfg.train;
  tc.total_steps = 10000;
  tc.select_episodes = 0;
  tc.checkpoint_every = 10000;
  int audits = 0;
  std::size_t mismatches = 0, audited = 0;
  TrainHooks hooks;
  hooks.after_relabel = [&](long, const ReplayBuffer& buf, const RewardModel& m) {
    ++audits;
    audited += buf.size();
    mismatches += audit_relabel(buf, m);
  };
  const auto res = run_training(rs.train, boot, labels, per, tc, std::nullopt, hooks);
  const bool ok = mismatches == 0 && audits == res.reward_updates && audits >= 10000 / tc.reward_period;
  return {ok, fmt("%d audits after %d reward updates, %zu transitions checked, %zu mismatches", audits,
                  res.reward_updates, audited, mismatches)};
}

// 7: full lift pipeline, BC-SAC against BC-only on the same demonstrations.
Outcome criterion_7() {
  const fs::path dir = work_dir("c7");
  fs::remove_all(dir);
  omp_set_num_threads(1);
  run_pipeline(lift_config(), {dir, false});
  const json ev = read_json_file(dir / "eval.json");
  const double sac = ev.at("policy").at("success_rate").get<double>();
  const double bc = ev.at("bc_only").at("success_rate").get<double>();
  const int n = ev.at("policy").at("episodes").get<int>();
  return {sac >= 0.8 && sac - bc >= 0.2,
          fmt("BC-SAC %.3f (need >= 0.8), BC-only %.3f, margin %.3f (need >= 0.2), %d episodes", sac, bc, sac - bc, n)};
}

// 8: feasibility gate under action noise, paired episodes.
Outcome criterion_8() {
  const RunConfig cfg = lift_config();
  const fs::path dir = work_dir("c7");
  std::string note;
  if (!fs::exists(dir / "eval.json")) {
    const auto t0 = std::chrono::steady_clock::now();
    run_pipeline(cfg, {dir, false});
    note = fmt("; trained its own run first (%.0f s, not counted)",
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto rs = load_run_scenes(dir, cfg.demos);
  const Perception per(rs.refined.cameras, rs.truth.task);
  const Policy policy = load_policy(dir / "checkpoints" / "selected.bin");
  const RewardModel feas = load_reward_model(dir / "reward" / "feasibility.bin");
  EvalConfig ec = cfg.eval;
  ec.randomize = cfg.train.randomize;
  ec.episodes = 100;
  ec.action_noise = 0.03;
  ec.seed = derive_seed(cfg.seed, "gate_eval", 0);
  const auto ctl = policy_controller(policy, per);
  const auto un = evaluate(ctl, rs.eval, per, ec);
  const auto ga = evaluate(ctl, rs.eval, per, ec, &feas, cfg.gate);
  int denied = 0;
  for (const auto& e : ga.episodes) denied += e.denied;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double diff = ga.success_rate - un.success_rate;
  return {diff >= 0.05 && secs < 600,
          fmt("gated %.3f, ungated %.3f, difference %.3f (need >= 0.05), %d closes denied, eval %.0f s%s",
              ga.success_rate, un.success_rate, diff, denied, secs, note.c_str())};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 9: two runs with identical config, seed and one thread give byte-identical outputs.
Outcome criterion_9() {
  const RunConfig cfg = load_run_config(fs::path(PRISM_SOURCE_DIR) / "configs" / "determinism.json");
  omp_set_num_threads(1);
  const fs::path a = work_dir("c9a"), b = work_dir("c9b");
  fs::remove_all(a);
  fs::remove_all(b);
  run_pipeline(cfg, {a, false});
  run_pipeline(cfg, {b, false});
  bool ok = true;
  std::string detail;
  for (const char* f : {"metrics.csv", "eval.json"}) {
    const std::string x = slurp(a / f), y = slurp(b / f);
    const bool same = !x.empty() && x == y;
    ok = ok && same;
    if (!detail.empty()) detail += "; ";
    detail += fmt("%s %s (%zu bytes)", f, same ? "identical" : "DIFFERS", x.size());
  }
  return {ok, detail};
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("PRISM_FORGE_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
  const std::map<int, Criterion> all = {
      {1, {"geometry oracle equivalence", 60, criterion_1}},
      {2, {"refinement soundness", 300, criterion_2}},
      {3, {"noiseless label fidelity", 120, criterion_3}},
      {4, {"view-count trend", 300, criterion_4}},
      {5, {"gradient check", 60, criterion_5}},
      {6, {"relabel consistency", 600, criterion_6}},
      {7, {"end-to-end learning", 3600, criterion_7}},
      {8, {"feasibility-gate benefit", 4200, criterion_8}},
      {9, {"determinism", 1800, criterion_9}},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  bool ok = true;
  for (const auto& [id, c] : all) {
    if (!pick.empty() && !pick.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    ok = ok && pass;
    std::printf("criterion %d [%s] %s: %s; %.1f s (budget %.0f s)\n", id, pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), secs, c.budget_s);
    std::fflush(stdout);
  }
  return ok ? 0 : 1;
}
