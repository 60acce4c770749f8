#include "prism/refine.hpp"

#include "prism/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace prism {

namespace {

constexpr int kVarsPerObject = 4;  // dx, dy, dz, dyaw

std::vector<PoseEstimate> offset_poses(const std::vector<PoseEstimate>& est, const std::vector<double>& v) {
  std::vector<PoseEstimate> out = est;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* x = &v[kVarsPerObject * i];
    auto& p = out[i].pose;
    p.t += Vec3(x[0], x[1], x[2]);
    p.q = canonical(Quat(Eigen::AngleAxisd(x[3], Vec3::UnitZ())) * p.q);
  }
  return out;
}

/// States captured during an open-loop replay: one per constraint, plus the final one.
struct KeyReplay {
  std::vector<WorldState> at;
  WorldState final_state;
};

KeyReplay replay_keys(const WorldState& w0, const RefinementProblem& pb, const WorldConfig& wcfg) {
  const auto& frames = pb.demonstration.frames;
  const int T = static_cast<int>(frames.size());
  KeyReplay r;
  r.at.resize(pb.constraints.size());
  WorldState w = w0;
  for (int t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < pb.constraints.size(); ++c) {
      if (pb.constraints[c].timestep == t) r.at[c] = w;
    }
    if (t + 1 < T) w = step(w, frames[static_cast<std::size_t>(t)].action, wcfg);
  }
  r.final_state = std::move(w);
  return r;
}

struct Terms {
  double objective = 0.0;
  double penalty = 0.0;
};

Terms evaluate_terms(const std::vector<PoseEstimate>& poses, const RefinementProblem& pb, const WorldConfig& wcfg) {
  Terms out;
  const WorldState w0 = apply_estimates(pb.base, poses);

  const WorldState settled = settle(w0, wcfg);
  for (std::size_t i = 0; i < w0.objects.size(); ++i) {
    out.penalty += (w0.objects[i].pose.t - settled.objects[i].pose.t).squaredNorm();
  }
  for (const auto& c : check_collision(w0, wcfg)) out.penalty += c.depth * c.depth;

  // Replay from the supported placement so an estimate hovering above its support still gets grasped.
  const auto rep = replay_keys(settled, pb, wcfg);
  for (std::size_t c = 0; c < pb.constraints.size(); ++c) {
    const auto& k = pb.constraints[c];
    const auto& w = rep.at[c];
    const auto* o = w.find(k.object_id);
    if (!o) continue;
    const double d = (w.gripper.pose.t - o->pose.t).norm();
    out.objective += d * d;
    const double excess = std::max(0.0, d - k.epsilon);
    out.penalty += excess * excess;
  }
  const auto& task = pb.demonstration.task;
  const auto& wf = rep.final_state;
  for (std::size_t i = 1; i < task.target_ids.size(); ++i) {
    if (const auto* o = wf.find(task.target_ids[i])) {
      const double d = (wf.gripper.pose.t - o->pose.t).head<2>().norm();
      out.objective += d * d;
      const double excess = std::max(0.0, d - pb.config.epsilon_g);
      out.penalty += excess * excess;
    }
  }
  if (!task.target_ids.empty() && !task_success(wf, task, wcfg)) {
    const double eps = pb.config.epsilon_g;
    out.penalty += eps * eps;
  }
  return out;
}

struct RestartOutcome {
  std::vector<PoseEstimate> poses;
  double objective = 0.0;
  std::vector<Violation> violations;
  int iterations = 0;
  int restart = 0;
  std::vector<std::vector<double>> trace;
};

double total_violation(const std::vector<Violation>& v) {
  double s = 0.0;
  for (const auto& x : v) s += x.magnitude;
  return s;
}

RestartOutcome run_restart(const RefinementProblem& pb, int k, const WorldConfig& wcfg) {
  const auto& cfg = pb.config;
  const std::size_t n = pb.estimates.size() * kVarsPerObject;
  std::vector<double> v(n, 0.0);
  if (k > 0) {
    Rng rng = make_rng(cfg.seed, "refine", static_cast<std::uint64_t>(k));
    for (std::size_t i = 0; i < pb.estimates.size(); ++i) {
      const double ts = pb.estimates[i].translation_noise_scale;
      const double ys = pb.estimates[i].yaw_noise_scale;
      for (int a = 0; a < 3; ++a) v[kVarsPerObject * i + a] = uniform(rng, -ts, ts);
      v[kVarsPerObject * i + 3] = uniform(rng, -ys, ys);
    }
  }

  RestartOutcome res;
  res.restart = k;
  double mu = cfg.penalty_initial;
  for (int round = 0; round < cfg.penalty_rounds; ++round, mu *= cfg.penalty_growth) {
    auto F = [&](const std::vector<double>& x) {
      const auto t = evaluate_terms(offset_poses(pb.estimates, x), pb, wcfg);
      return t.objective + mu * t.penalty;
    };
    std::vector<double> steps(n);
    for (std::size_t j = 0; j < n; ++j) steps[j] = (j % kVarsPerObject == 3) ? cfg.initial_yaw_step : cfg.initial_step;
    double fv = F(v);
    std::vector<double> trace{fv};
    for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
      ++res.iterations;
      for (std::size_t j = 0; j < n; ++j) {
        double best = fv;
        double best_x = v[j];
        const double x0 = v[j];
        for (double sgn : {1.0, -1.0}) {
          v[j] = x0 + sgn * steps[j];
          const double f = F(v);
          if (f < best) {
            best = f;
            best_x = v[j];
          }
        }
        v[j] = best_x;
        if (best < fv) {
          fv = best;
          steps[j] *= 2.0;
        } else {
          steps[j] *= 0.5;
        }
      }
      trace.push_back(fv);
      if (*std::max_element(steps.begin(), steps.end()) < cfg.min_step) break;
    }
    res.trace.push_back(std::move(trace));
  }

  // Polish: drop objects onto their supports, keep whichever of raw/polished validates better.
  auto raw = offset_poses(pb.estimates, v);
  auto raw_viol = validate(raw, pb, wcfg);
  const WorldState settled = settle(apply_estimates(pb.base, raw), wcfg);
  auto polished = raw;
  for (auto& p : polished) p.pose = settled.at(p.object_id).pose;
  auto pol_viol = validate(polished, pb, wcfg);
  const bool use_polished = pol_viol.size() < raw_viol.size() ||
                            (pol_viol.size() == raw_viol.size() && total_violation(pol_viol) <= total_violation(raw_viol));
  res.poses = use_polished ? std::move(polished) : std::move(raw);
  res.violations = use_polished ? std::move(pol_viol) : std::move(raw_viol);
  res.objective = evaluate_terms(res.poses, pb, wcfg).objective;
  return res;
}

bool better(const RestartOutcome& a, const RestartOutcome& b) {
  const bool fa = a.violations.empty();
  const bool fb = b.violations.empty();
  if (fa != fb) return fa;
  if (!fa) {
    const double va = total_violation(a.violations);
    const double vb = total_violation(b.violations);
    if (va != vb) return va < vb;
  }
  if (a.objective != b.objective) return a.objective < b.objective;
  if (a.iterations != b.iterations) return a.iterations < b.iterations;
  return a.restart < b.restart;
}

}  // namespace

RefinementProblem make_problem(const WorldState& base, std::vector<PoseEstimate> estimates, Demonstration demo,
                               const RefineConfig& cfg, const WorldConfig& wcfg) {
  RefinementProblem pb;
  pb.base = base;
  pb.config = cfg;
  const WorldState est = apply_estimates(base, estimates);
  pb.constraints = extract_key_states(demo, est, cfg.epsilon_g, wcfg);
  pb.estimates = std::move(estimates);
  pb.demonstration = std::move(demo);
  return pb;
}

std::vector<Violation> validate(const std::vector<PoseEstimate>& poses, const RefinementProblem& pb,
                                const WorldConfig& wcfg) {
  std::vector<Violation> out;
  const WorldState w0 = apply_estimates(pb.base, poses);

  for (const auto& c : check_collision(w0, wcfg)) {
    out.push_back({c.b == 0 ? "table" : "collision", c.a, c.b, 0, c.depth});
  }
  const WorldState settled = settle(w0, wcfg);
  for (std::size_t i = 0; i < w0.objects.size(); ++i) {
    const double d = (w0.objects[i].pose.t - settled.objects[i].pose.t).norm();
    if (d > wcfg.contact_tolerance) out.push_back({"support", w0.objects[i].id, 0, 0, d});
  }

  // Non-penetration along the replay; deepest occurrence per pair.
  const auto& frames = pb.demonstration.frames;
  std::map<std::pair<int, int>, Violation> worst;
  WorldState w = w0;
  for (std::size_t t = 1; t < frames.size(); ++t) {
    w = step(w, frames[t - 1].action, wcfg);
    for (const auto& c : check_collision(w, wcfg)) {
      auto& v = worst[{c.a, c.b}];
      if (c.depth > v.magnitude) v = {c.b == 0 ? "table" : "collision", c.a, c.b, static_cast<int>(t), c.depth};
    }
  }
  for (auto& [key, v] : worst) {
    // Pairs already reported on the initial scene are not repeated.
    const bool initial = std::any_of(out.begin(), out.end(), [&](const Violation& x) {
      return x.timestep == 0 && x.object_a == key.first && x.object_b == key.second;
    });
    if (!initial) out.push_back(v);
  }

  const auto rep = replay_keys(w0, pb, wcfg);
  for (std::size_t c = 0; c < pb.constraints.size(); ++c) {
    const auto& k = pb.constraints[c];
    const auto* o = rep.at[c].find(k.object_id);
    const double d = o ? (rep.at[c].gripper.pose.t - o->pose.t).norm() : std::numeric_limits<double>::infinity();
    if (d > k.epsilon) out.push_back({"trajectory", k.object_id, 0, k.timestep, d - k.epsilon});
  }
  const auto& task = pb.demonstration.task;
  if (!task.target_ids.empty() && !task_success(rep.final_state, task, wcfg)) {
    out.push_back({"task", task.target_ids[0], 0,
                   static_cast<int>(frames.size()) - 1, 1.0});
  }
  return out;
}

double refinement_objective(const std::vector<PoseEstimate>& poses, const RefinementProblem& problem,
                            const WorldConfig& wcfg) {
  return evaluate_terms(poses, problem, wcfg).objective;
}

RefinementResult refine(const RefinementProblem& pb, const WorldConfig& wcfg) {
  if (pb.demonstration.frames.empty()) throw std::invalid_argument("refine: empty demonstration");
  for (const auto& c : pb.constraints) {
    if (c.timestep < 0 || c.timestep >= static_cast<int>(pb.demonstration.frames.size())) {
      throw std::invalid_argument("refine: constraint timestep outside the demonstration");
    }
    if (!(c.epsilon > 0.0)) throw std::invalid_argument("refine: epsilon must be positive");
    if (std::none_of(pb.estimates.begin(), pb.estimates.end(),
                     [&](const PoseEstimate& e) { return e.object_id == c.object_id; })) {
      throw std::invalid_argument("refine: constraint references object " + std::to_string(c.object_id) +
                                  " without an estimate");
    }
  }
  for (const auto& e : pb.estimates) {
    if (e.translation_noise_scale < 0.0 || e.yaw_noise_scale < 0.0) {
      throw std::invalid_argument("refine: negative noise scale");
    }
  }

  const int K = std::max(0, pb.config.restarts) + 1;
  std::vector<RestartOutcome> outcomes(static_cast<std::size_t>(K));
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < K; ++k) outcomes[static_cast<std::size_t>(k)] = run_restart(pb, k, wcfg);

  const RestartOutcome* best = &outcomes[0];
  for (const auto& o : outcomes) {
    if (better(o, *best)) best = &o;
  }
  RefinementResult r;
  r.poses = best->poses;
  r.objective = best->objective;
  r.violations = best->violations;
  r.feasible = r.violations.empty();
  r.restart = best->restart;
  r.round_trace = best->trace;
  for (const auto& o : outcomes) r.iterations += o.iterations;
  spdlog::debug("refine: feasible={} objective={:.3e} restart={} violations={}", r.feasible, r.objective, r.restart,
                r.violations.size());
  return r;
}

json refinement_result_to_json(const RefinementResult& r) {
  json poses = json::array();
  for (const auto& p : r.poses) poses.push_back({{"object_id", p.object_id}, {"pose", pose_to_json(p.pose)}});
  json viol = json::array();
  for (const auto& v : r.violations) {
    viol.push_back({{"kind", v.kind},
                    {"object_a", v.object_a},
                    {"object_b", v.object_b},
                    {"timestep", v.timestep},
                    {"magnitude", v.magnitude}});
  }
  return {{"feasible", r.feasible},
          {"objective", r.objective},
          {"iterations", r.iterations},
          {"restart", r.restart},
          {"poses", poses},
          {"violations", viol}};
}

}  // namespace prism
