#include "prism/oracle.hpp"

#include "prism/library.hpp"
#include "prism/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace prism {

namespace {

const char* kPredicateNames[] = {"overlaps", "occludes", "above_in_image", "inside_footprint", "near_in_image"};
const char* kSkillNames[] = {"pick", "place", "insert", "stack", "press"};

}  // namespace

Predicate parse_predicate(const std::string& s) {
  for (int i = 0; i < 5; ++i) {
    if (s == kPredicateNames[i]) return static_cast<Predicate>(i);
  }
  throw ConfigError("unknown predicate '" + s + "'");
}

std::string to_string(Predicate p) { return kPredicateNames[static_cast<int>(p)]; }

SkillFamily parse_skill(const std::string& s) {
  for (int i = 0; i < 5; ++i) {
    if (s == kSkillNames[i]) return static_cast<SkillFamily>(i);
  }
  throw ConfigError("unknown skill family '" + s + "'");
}

std::string to_string(SkillFamily s) { return kSkillNames[static_cast<int>(s)]; }

SkillFamily skill_for(TaskFamily f) {
  switch (f) {
    case TaskFamily::lift: return SkillFamily::pick;
    case TaskFamily::press: return SkillFamily::press;
    case TaskFamily::insert: return SkillFamily::insert;
    case TaskFamily::pick_place: return SkillFamily::place;
    case TaskFamily::stack: return SkillFamily::stack;
  }
  throw std::logic_error("unreachable task family");
}

bool ProjectionRelation::applies_to(const std::string& camera) const {
  return views.empty() || std::find(views.begin(), views.end(), camera) != views.end();
}

// ---- templates ----

QueryTemplate default_template(SkillFamily f) {
  auto rel = [](Predicate p, std::string s, std::string o, double thr = 0.0, std::vector<std::string> views = {}) {
    RoleRelation r;
    r.predicate = p;
    r.subject = std::move(s);
    r.object = std::move(o);
    r.threshold_px = thr;
    r.views = std::move(views);
    return r;
  };
  auto above_plane = [](std::string s, double z, std::vector<std::string> views) {
    RoleRelation r;
    r.predicate = Predicate::above_in_image;
    r.subject = std::move(s);
    r.region = PlaneRegion{z, 0.45};
    r.views = std::move(views);
    return r;
  };
  const std::vector<std::string> side = {"right", "front"};

  QueryTemplate t;
  t.family = f;
  t.pre_task = {rel(Predicate::near_in_image, "gripper", "target", 4.0)};
  switch (f) {
    case SkillFamily::pick:
      t.post_task = {above_plane("target", 0.10, side)};
      break;
    case SkillFamily::place:
      t.post_task = {rel(Predicate::inside_footprint, "target", "receptacle")};
      break;
    case SkillFamily::insert:
      // front sees the peg's height above the hole along the same image axis as planar error
      t.post_task = {rel(Predicate::near_in_image, "target", "receptacle", 3.2, {"scene", "right", "bird"})};
      break;
    case SkillFamily::stack:
      t.post_task = {above_plane("target", 0.10, side),
                     rel(Predicate::near_in_image, "target", "receptacle", 6.0, {"bird"}),
                     rel(Predicate::overlaps, "target", "receptacle", 0.0, {"scene", "left"})};
      break;
    case SkillFamily::press:
      t.post_task = {rel(Predicate::near_in_image, "gripper", "target", 3.0, side),
                     rel(Predicate::near_in_image, "gripper", "target", 4.0, {"bird"})};
      break;
  }
  return t;
}

namespace {

json role_relation_to_json(const RoleRelation& r) {
  json j = {{"predicate", to_string(r.predicate)}, {"subject", r.subject}};
  if (r.region) {
    j["region"] = {{"plane_z", r.region->z}, {"half_extent", r.region->half_extent}};
  } else {
    j["object"] = r.object;
  }
  if (r.predicate == Predicate::near_in_image) j["threshold_px"] = r.threshold_px;
  j["views"] = r.views;
  return j;
}

RoleRelation role_relation_from_json(const json& j) {
  RoleRelation r;
  r.predicate = parse_predicate(j.at("predicate").get<std::string>());
  r.subject = j.at("subject").get<std::string>();
  if (j.contains("region")) {
    r.region = PlaneRegion{j.at("region").at("plane_z").get<double>(), j.at("region").value("half_extent", 0.45)};
    if (r.predicate != Predicate::above_in_image) throw ConfigError("plane regions only support above_in_image");
  } else {
    r.object = j.at("object").get<std::string>();
    if (r.object == r.subject) throw ConfigError("relation subject and object must differ");
  }
  r.threshold_px = j.value("threshold_px", 0.0);
  if (r.predicate == Predicate::near_in_image && !(r.threshold_px > 0.0)) {
    throw ConfigError("near_in_image needs threshold_px > 0");
  }
  if (j.contains("views")) r.views = j.at("views").get<std::vector<std::string>>();
  return r;
}

}  // namespace

json template_to_json(const QueryTemplate& t) {
  json pre = json::array(), post = json::array();
  for (const auto& r : t.pre_task) pre.push_back(role_relation_to_json(r));
  for (const auto& r : t.post_task) post.push_back(role_relation_to_json(r));
  return {{"family", to_string(t.family)}, {"pre_task", pre}, {"post_task", post}};
}

QueryTemplate template_from_json(const json& j) {
  try {
    QueryTemplate t;
    t.family = parse_skill(j.at("family").get<std::string>());
    for (const auto& r : j.at("pre_task")) t.pre_task.push_back(role_relation_from_json(r));
    for (const auto& r : j.at("post_task")) t.post_task.push_back(role_relation_from_json(r));
    if (t.pre_task.empty() || t.post_task.empty()) throw ConfigError("template stages must be nonempty");
    return t;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed query template: ") + e.what());
  }
}

std::vector<ProjectionRelation> bind_relations(const std::vector<RoleRelation>& rels, const TaskSpec& task) {
  auto resolve = [&](const std::string& role) -> int {
    if (role == "gripper") return kGripperId;
    if (role == "target" && !task.target_ids.empty()) return task.target_ids[0];
    if (role == "receptacle" && task.target_ids.size() > 1) return task.target_ids[1];
    throw ConfigError("role '" + role + "' cannot be bound for task " + to_string(task.family));
  };
  std::vector<ProjectionRelation> out;
  for (const auto& r : rels) {
    ProjectionRelation p;
    p.predicate = r.predicate;
    p.subject = resolve(r.subject);
    if (r.region) {
      p.region = r.region;
    } else {
      p.object = resolve(r.object);
    }
    p.threshold_px = r.threshold_px;
    p.views = r.views;
    out.push_back(p);
  }
  return out;
}

// ---- footprints and predicates ----

void OracleErrorModel::check() const {
  if (!(p_flip >= 0.0 && p_flip < 0.5)) throw std::invalid_argument("p_flip must lie in [0, 0.5)");
}

ViewFootprints::ViewFootprints(const WorldState& w, const Camera& cam) : cam_(cam), items_(render_items(w)) {}

const ViewFootprints::Footprint& ViewFootprints::of(int id) const {
  if (auto it = cache_.find(id); it != cache_.end()) return it->second;
  const auto item = std::find_if(items_.begin(), items_.end(), [&](const RenderItem& r) { return r.id == id; });
  if (item == items_.end()) throw std::invalid_argument("relation references unknown id " + std::to_string(id));
  Footprint fp;
  const std::span<const RenderItem> one(&*item, 1);
  for (int v = 0; v < cam_.height; ++v) {
    for (int u = 0; u < cam_.width; ++u) {
      const auto s = trace_pixel(one, cam_, u, v);
      if (s.id != 0) {
        fp.pixels.push_back(v * cam_.width + u);
        fp.depth.push_back(s.depth);
      }
    }
  }
  return cache_.emplace(id, std::move(fp)).first->second;
}

double region_top_row(const Camera& cam, const PlaneRegion& r) {
  double top = std::numeric_limits<double>::infinity();
  constexpr int kPerEdge = 32;
  const double e = r.half_extent;
  for (int i = 0; i <= kPerEdge; ++i) {
    const double s = -e + 2.0 * e * i / kPerEdge;
    for (const Vec3& p : {Vec3(s, -e, r.z), Vec3(s, e, r.z), Vec3(-e, s, r.z), Vec3(e, s, r.z)}) {
      const auto pr = project(cam, p);
      if (!pr.behind) top = std::min(top, pr.pixel.y());
    }
  }
  return top;
}

bool relation_holds(const ViewFootprints& view, const ProjectionRelation& rel) {
  if (rel.object && *rel.object == rel.subject) throw std::invalid_argument("relation subject equals object");
  const auto& S = view.of(rel.subject);
  const int W = view.camera().width;

  if (rel.region) {
    if (rel.predicate != Predicate::above_in_image) throw std::invalid_argument("plane regions only support above_in_image");
    if (S.pixels.empty()) return false;
    const double top = region_top_row(view.camera(), *rel.region);
    if (!std::isfinite(top)) return false;
    const int bottom = *std::max_element(S.pixels.begin(), S.pixels.end()) / W;
    return bottom < top;
  }
  if (!rel.object) throw std::invalid_argument("relation needs an object or a region");
  const auto& O = view.of(*rel.object);
  if (S.pixels.empty() || O.pixels.empty()) return false;

  switch (rel.predicate) {
    case Predicate::overlaps:
    case Predicate::occludes:
    case Predicate::inside_footprint: {
      // Pixel lists are sorted; merge.
      std::size_t i = 0, j = 0;
      int shared = 0, nearer = 0;
      while (i < S.pixels.size() && j < O.pixels.size()) {
        if (S.pixels[i] < O.pixels[j]) {
          ++i;
        } else if (S.pixels[i] > O.pixels[j]) {
          ++j;
        } else {
          ++shared;
          if (S.depth[i] < O.depth[j]) ++nearer;
          ++i;
          ++j;
        }
      }
      if (rel.predicate == Predicate::overlaps) return shared > 0;
      if (rel.predicate == Predicate::occludes) return shared > 0 && 2 * nearer > shared;
      return static_cast<double>(shared) >= 0.9 * static_cast<double>(S.pixels.size());
    }
    case Predicate::above_in_image: {
      const int bottom = S.pixels.back() / W;
      const int top = O.pixels.front() / W;
      return bottom < top;
    }
    case Predicate::near_in_image: {
      auto centroid = [W](const ViewFootprints::Footprint& f) {
        Vec2 c = Vec2::Zero();
        for (int p : f.pixels) c += Vec2(p % W, p / W);
        return Vec2(c / static_cast<double>(f.pixels.size()));
      };
      return (centroid(S) - centroid(O)).norm() <= rel.threshold_px;
    }
  }
  return false;
}

LabelRecord evaluate_views(const WorldState& w, const std::vector<Camera>& cameras,
                           const std::vector<ProjectionRelation>& relations) {
  if (cameras.empty()) throw std::invalid_argument("evaluate_views needs at least one camera");
  LabelRecord rec;
  rec.view_count = static_cast<int>(cameras.size());
  for (const auto& cam : cameras) {
    const ViewFootprints vf(w, cam);
    bool ok = true;
    for (const auto& r : relations) {
      if (r.applies_to(cam.name) && !relation_holds(vf, r)) {
        ok = false;
        break;
      }
    }
    rec.views.push_back(cam.name);
    rec.per_view.push_back(ok);
  }
  rec.label = aggregate(rec.per_view, false);
  return rec;
}

int aggregate(const std::vector<bool>& verdicts, bool majority) {
  if (majority) {
    const auto yes = std::count(verdicts.begin(), verdicts.end(), true);
    return 2 * yes > static_cast<long>(verdicts.size()) ? 1 : 0;
  }
  return std::all_of(verdicts.begin(), verdicts.end(), [](bool b) { return b; }) ? 1 : 0;
}

LabelRecord noisy_label(const WorldState& w, const std::vector<Camera>& cameras,
                        const std::vector<ProjectionRelation>& relations, const OracleErrorModel& err,
                        std::uint64_t query_index, bool majority) {
  err.check();
  LabelRecord rec = evaluate_views(w, cameras, relations);
  Rng rng = make_rng(err.seed, "oracle_flip", query_index);
  for (std::size_t j = 0; j < rec.per_view.size(); ++j) {
    if (uniform01(rng) < err.p_flip) rec.per_view[j] = !rec.per_view[j];
  }
  rec.label = aggregate(rec.per_view, majority);
  return rec;
}

TwoStageLabels two_stage_query(const WorldState& pre_world, const WorldState& post_world, const TaskSpec& task,
                               const QueryTemplate& tmpl, const std::vector<Camera>& cameras,
                               const OracleErrorModel& err, std::uint64_t query_index) {
  if (skill_for(task.family) != tmpl.family) {
    throw std::invalid_argument("template family " + to_string(tmpl.family) + " does not label task " +
                                to_string(task.family));
  }
  TwoStageLabels out;
  out.pre = noisy_label(pre_world, cameras, bind_relations(tmpl.pre_task, task), err, 2 * query_index);
  out.pre.stage = Stage::pre;
  out.post = noisy_label(post_world, cameras, bind_relations(tmpl.post_task, task), err, 2 * query_index + 1);
  out.post.stage = Stage::post;
  return out;
}

bool ground_truth(const WorldState& w, const TaskSpec& task, Stage stage, const WorldConfig& wcfg) {
  if (stage == Stage::post) return task_success(w, task, wcfg);
  if (task.target_ids.empty()) return false;
  const auto* o = w.find(task.target_ids[0]);
  return o && (w.gripper.pose.t - o->pose.t).norm() <= wcfg.grasp_radius;
}

// ---- study scenes ----

double alignment_tolerance(SkillFamily s) {
  switch (s) {
    case SkillFamily::pick: return 0.03;
    case SkillFamily::place: return 0.04;
    case SkillFamily::insert: return 0.015;
    case SkillFamily::stack: return 0.035;
    case SkillFamily::press: return 0.03;
  }
  return 0.03;
}

namespace {

TaskFamily task_for(SkillFamily s) {
  switch (s) {
    case SkillFamily::pick: return TaskFamily::lift;
    case SkillFamily::place: return TaskFamily::pick_place;
    case SkillFamily::insert: return TaskFamily::insert;
    case SkillFamily::stack: return TaskFamily::stack;
    case SkillFamily::press: return TaskFamily::press;
  }
  return TaskFamily::lift;
}

Stage study_stage(SkillFamily s) { return s == SkillFamily::pick || s == SkillFamily::press ? Stage::pre : Stage::post; }

void hold(WorldState& w, int id) {
  auto& g = w.gripper;
  g.pose = Pose{w.at(id).pose.t, Quat::Identity()};
  g.aperture = Aperture::closed;
  g.held = id;
  g.grasp_offset = compose(invert(g.pose), w.at(id).pose);
}

bool in_workspace(const WorldState& w, const WorldConfig& cfg) {
  auto inside = [&](const Vec3& p) {
    return (p.array() >= cfg.workspace_lo.array()).all() && (p.array() <= cfg.workspace_hi.array()).all();
  };
  if (!inside(w.gripper.pose.t)) return false;
  for (const auto& o : w.objects) {
    if (!inside(o.pose.t)) return false;
  }
  return true;
}

/// The configuration that satisfies the stage's 3D predicate, with small in-tolerance perturbations.
WorldState positive_world(const TaskScene& ts, SkillFamily s, Stage stage, Rng& rng) {
  WorldState w = ts.scene.world;
  const int target = ts.task.target_ids[0];
  auto small = [&](double r) { return Vec3(uniform(rng, -r, r), uniform(rng, -r, r), 0.0); };
  if (stage == Stage::pre) {
    w.gripper.pose.t = w.at(target).pose.t + small(0.004);
    if (s == SkillFamily::press) w.gripper.pose.t.z() = highest_point(w.at(target)) + 0.002;
    return w;
  }
  auto& o = *w.find(target);
  switch (s) {
    case SkillFamily::pick: {
      const double rise = ts.task.threshold("lift_height", 0.10) + uniform(rng, 0.02, 0.12);
      o.pose.t.z() += rise;
      hold(w, target);
      return w;
    }
    case SkillFamily::place:
    case SkillFamily::insert:
    case SkillFamily::stack: {
      const auto& dest = w.at(ts.task.target_ids[1]);
      const double r = s == SkillFamily::place ? 0.02 : s == SkillFamily::insert ? 0.0075 : 0.008;
      o.pose.t.head<2>() = dest.pose.t.head<2>() + small(r).head<2>();
      o.pose.t.z() = s == SkillFamily::stack ? highest_point(dest) + o.support_height + 0.01 : o.support_height;
      w.gripper.pose.t = Vec3(o.pose.t.x(), o.pose.t.y(), 0.3);
      return settle(w);
    }
    case SkillFamily::press: {
      o.pose.t.z() -= 0.007;
      w.gripper.pose.t = Vec3(o.pose.t.x(), o.pose.t.y(), highest_point(o) - 0.001);
      return w;
    }
  }
  return w;
}

/// Ambiguity-free negative: the moved entity is displaced by more than twice the tolerance on every planar
/// axis (and upward, for the gripper).
WorldState separated_world(const TaskScene& ts, SkillFamily s, Stage stage, Rng& rng) {
  WorldState w = positive_world(ts, s, stage, rng);
  const double tol = stage == Stage::pre ? WorldConfig{}.grasp_radius : alignment_tolerance(s);
  auto off = [&] {
    const double m = uniform(rng, 2.2 * tol, 2.2 * tol + 0.08);
    return uniform01(rng) < 0.5 ? -m : m;
  };
  const int target = ts.task.target_ids[0];
  if (stage == Stage::pre) {
    w.gripper.pose.t += Vec3(off(), off(), std::abs(off()));
    return w;
  }
  auto& o = *w.find(target);
  if (s == SkillFamily::pick) {
    // Held below the lift threshold by at least twice the tolerance.
    o.pose = ts.scene.world.at(target).pose;
    o.pose.t.z() += uniform(rng, 0.0, ts.task.threshold("lift_height", 0.10) - 2.2 * tol);
    hold(w, target);
    return w;
  }
  if (s == SkillFamily::press) {
    w = ts.scene.world;
    w.gripper.pose.t = w.at(target).pose.t + Vec3(off(), off(), 0.02 + std::abs(off()));
    return w;
  }
  w.gripper = ts.scene.world.gripper;
  o.pose.t.x() += off();
  o.pose.t.y() += off();
  o.pose.t.z() = o.support_height;
  return settle(w);
}

}  // namespace

std::optional<StudyScene> make_study_scene(SkillFamily s, bool positive, int ambiguous_view,
                                           const std::vector<Camera>& cameras, const QueryTemplate& tmpl,
                                           std::uint64_t seed, std::uint64_t index) {
  const Stage stage = study_stage(s);
  const auto& role_rels = stage == Stage::pre ? tmpl.pre_task : tmpl.post_task;
  const WorldConfig wcfg;
  constexpr int kAttempts = 40;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Rng rng = make_rng(seed, "study_scene", index * kAttempts + static_cast<std::uint64_t>(attempt));
    const auto ts = make_task_scene(task_for(s), rng(), 0.05);
    const auto relations = bind_relations(role_rels, ts.task);
    StudyScene sc;
    sc.task = ts.task;
    sc.stage = stage;
    if (positive) {
      sc.world = positive_world(ts, s, stage, rng);
    } else if (ambiguous_view < 0) {
      sc.world = separated_world(ts, s, stage, rng);
    } else {
      // Slide the moved entity along the chosen camera's ray through its positive placement.
      const Camera& cam = cameras.at(static_cast<std::size_t>(ambiguous_view));
      WorldState w = positive_world(ts, s, stage, rng);
      const bool gripper_moves = stage == Stage::pre || s == SkillFamily::press;
      const int target = ts.task.target_ids[0];
      const Vec3 p = gripper_moves ? w.gripper.pose.t : w.at(target).pose.t;
      const Vec3 ray = (p - cam.pose.t).normalized();
      const double m = uniform(rng, 0.06, 0.2);
      const Vec3 q = p + (uniform01(rng) < 0.5 ? -m : m) * ray;
      if (gripper_moves) {
        w.gripper.pose.t = q;
      } else {
        w.gripper.held.reset();
        w.find(target)->pose.t = q;
        hold(w, target);
      }
      sc.world = w;
      sc.ambiguous_view = ambiguous_view;
    }
    auto& w = sc.world;
    if (w.gripper.pose.t.z() < w.table_height || !check_collision(w, wcfg).empty() || !in_workspace(w, wcfg)) continue;
    sc.truth = ground_truth(w, sc.task, stage, wcfg);
    if (sc.truth != positive) continue;
    const auto rec = evaluate_views(w, cameras, relations);
    if (positive || ambiguous_view < 0) return sc;
    // The chosen view must be fooled and some other view must not be.
    const auto a = static_cast<std::size_t>(ambiguous_view);
    bool resolvable = false;
    for (std::size_t j = 0; j < rec.per_view.size(); ++j) resolvable = resolvable || (j != a && !rec.per_view[j]);
    if (rec.per_view[a] && resolvable) return sc;
  }
  return std::nullopt;
}

std::vector<StudyRow> view_count_study(SkillFamily s, const std::vector<Camera>& cameras, const QueryTemplate& tmpl,
                                       const StudyConfig& cfg) {
  cfg.err.check();
  if (cfg.trials < 100) throw std::invalid_argument("study needs at least 100 trials");
  const int kmax = std::min<int>(cfg.k_max, static_cast<int>(cameras.size()));
  const int n_cams = static_cast<int>(cameras.size());
  std::vector<std::vector<int>> correct(static_cast<std::size_t>(cfg.trials), std::vector<int>(kmax, 0));
  std::vector<int> failures(static_cast<std::size_t>(cfg.trials), 0);
  std::vector<char> unbuilt(static_cast<std::size_t>(cfg.trials), 0);

#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < cfg.trials; ++t) {
    Rng rng = make_rng(cfg.err.seed, "study_trial", static_cast<std::uint64_t>(t));
    const bool positive = uniform01(rng) < cfg.positive_fraction;
    std::optional<StudyScene> sc;
    for (int draw = 0; !sc && draw < 64; ++draw) {
      const int a = positive ? -1 : static_cast<int>(uniform01(rng) * n_cams) % n_cams;
      sc = make_study_scene(s, positive, a, cameras, tmpl, cfg.err.seed,
                            static_cast<std::uint64_t>(t) * 64 + static_cast<std::uint64_t>(draw));
      if (!sc) ++failures[static_cast<std::size_t>(t)];
    }
    if (!sc) {
      unbuilt[static_cast<std::size_t>(t)] = 1;
      continue;
    }
    const auto rels = bind_relations(sc->stage == Stage::pre ? tmpl.pre_task : tmpl.post_task, sc->task);
    // Flips for view j are shared by every k >= j + 1.
    const auto rec = noisy_label(sc->world, cameras, rels, cfg.err, static_cast<std::uint64_t>(t), false);
    for (int k = 1; k <= kmax; ++k) {
      const std::vector<bool> prefix(rec.per_view.begin(), rec.per_view.begin() + k);
      const int y = aggregate(prefix, cfg.majority);
      correct[static_cast<std::size_t>(t)][static_cast<std::size_t>(k - 1)] = (y == 1) == sc->truth ? 1 : 0;
    }
  }

  if (std::any_of(unbuilt.begin(), unbuilt.end(), [](char c) { return c != 0; })) {
    throw std::runtime_error("view-count study: could not construct a scene for " + to_string(s));
  }
  int redraws = 0;
  for (int f : failures) redraws += f;
  if (redraws > 0) spdlog::debug("study {}: {} scene redraws", to_string(s), redraws);
  std::vector<StudyRow> rows;
  for (int k = 1; k <= kmax; ++k) {
    StudyRow r;
    r.k = k;
    for (const auto& c : correct) r.correct += c[static_cast<std::size_t>(k - 1)];
    r.incorrect = cfg.trials - r.correct;
    r.accuracy = static_cast<double>(r.correct) / cfg.trials;
    rows.push_back(r);
  }
  return rows;
}

void write_study_csv(const std::filesystem::path& path, const std::vector<StudyRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "k,correct,incorrect,accuracy\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", r.accuracy);
    out << r.k << ',' << r.correct << ',' << r.incorrect << ',' << buf << '\n';
  }
}

}  // namespace prism
