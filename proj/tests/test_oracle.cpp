#include "oracles.hpp"

#include "prism/library.hpp"
#include "prism/oracle.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace prism;

namespace {

struct BruteFootprint {
  std::map<int, double> depth;  // pixel index -> depth
};

BruteFootprint brute_footprint(const RenderItem& it, const Camera& cam) {
  BruteFootprint f;
  const std::vector<RenderItem> one{it};
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const auto s = oracle_ref::brute_pixel(one, cam, u, v);
      if (s.id != 0) f.depth[v * cam.width + u] = s.depth;
    }
  }
  return f;
}

bool brute_relation(const BruteFootprint& S, const BruteFootprint& O, Predicate p, double thr, int W) {
  if (S.depth.empty() || O.depth.empty()) return false;
  int shared = 0, nearer = 0;
  for (const auto& [px, d] : S.depth) {
    if (auto it = O.depth.find(px); it != O.depth.end()) {
      ++shared;
      if (d < it->second) ++nearer;
    }
  }
  auto rows = [W](const BruteFootprint& f) {
    int lo = 1 << 30, hi = -1;
    for (const auto& kv : f.depth) {
      lo = std::min(lo, kv.first / W);
      hi = std::max(hi, kv.first / W);
    }
    return std::pair{lo, hi};
  };
  auto centroid = [W](const BruteFootprint& f) -> Vec2 {
    double x = 0, y = 0;
    for (const auto& kv : f.depth) {
      x += kv.first % W;
      y += kv.first / W;
    }
    return Vec2(x, y) / static_cast<double>(f.depth.size());
  };
  switch (p) {
    case Predicate::overlaps: return shared > 0;
    case Predicate::occludes: return shared > 0 && 2 * nearer > shared;
    case Predicate::inside_footprint: return shared >= 0.9 * static_cast<double>(S.depth.size());
    case Predicate::above_in_image: return rows(S).second < rows(O).first;
    case Predicate::near_in_image: return (centroid(S) - centroid(O)).norm() <= thr;
  }
  return false;
}

WorldState world_of(const std::vector<RenderItem>& items) {
  WorldState w;
  for (const auto& it : items) {
    SceneObject o;
    o.id = it.id;
    o.name = "o" + std::to_string(it.id);
    o.shape = it.shape;
    o.pose = it.pose;
    o.refresh_support_height();
    w.objects.push_back(o);
  }
  w.gripper.pose.t = Vec3(0, 0, 2.5);  // out of every default view
  return w;
}

SceneObject make(int id, Shape s, Vec3 t) {
  SceneObject o;
  o.id = id;
  o.name = "o" + std::to_string(id);
  o.shape = s;
  o.pose.t = t;
  o.refresh_support_height();
  return o;
}

const Camera& camera(const std::vector<Camera>& cams, const std::string& name) {
  for (const auto& c : cams) {
    if (c.name == name) return c;
  }
  throw std::runtime_error("no camera " + name);
}

ProjectionRelation relation(Predicate p, int s, int o, double thr = 0.0) {
  ProjectionRelation r;
  r.predicate = p;
  r.subject = s;
  r.object = o;
  r.threshold_px = thr;
  return r;
}

}  // namespace

TEST_CASE("relation_holds matches per-pixel brute force on random scenes") {
  Rng rng = make_rng(17, "oracle_brute");
  const auto cams = default_cameras();
  const Predicate preds[] = {Predicate::overlaps, Predicate::occludes, Predicate::above_in_image,
                             Predicate::inside_footprint, Predicate::near_in_image};
  int checked = 0, positives = 0;
  for (int s = 0; s < 200; ++s) {
    auto items = oracle_ref::random_items(rng, 4);
    if (items.size() < 2) continue;
    const auto w = world_of(items);
    const Camera& cam = cams[static_cast<std::size_t>(s) % cams.size()];
    const ViewFootprints vf(w, cam);
    std::map<int, BruteFootprint> brute;
    for (const auto& it : items) brute[it.id] = brute_footprint(it, cam);
    for (const auto& a : items) {
      for (const auto& b : items) {
        if (a.id == b.id) continue;
        for (Predicate p : preds) {
          const double thr = 6.0;
          const bool got = relation_holds(vf, relation(p, a.id, b.id, thr));
          const bool want = brute_relation(brute[a.id], brute[b.id], p, thr, cam.width);
          CHECK_MESSAGE(got == want, "scene ", s, " ", to_string(p), " ", a.id, "->", b.id);
          ++checked;
          positives += got ? 1 : 0;
        }
      }
    }
  }
  CHECK(checked > 1000);
  CHECK(positives > 50);
}

TEST_CASE("relation_holds: occlusion, disjoint footprints, off-frustum") {
  const auto cams = default_cameras();
  const Camera& front = camera(cams, "front");
  WorldState w;
  w.objects.push_back(make(1, Box{Vec3(0.05, 0.05, 0.05)}, Vec3(0, 0, 0.10)));
  w.objects.push_back(make(2, Sphere{0.03}, Vec3(0.35, 0, 0.10)));
  w.objects.push_back(make(3, Box{Vec3(0.03, 0.03, 0.03)}, Vec3(0, 0.3, 0.10)));
  w.objects.push_back(make(4, Box{Vec3(0.03, 0.03, 0.03)}, Vec3(0, -0.3, 0.10)));
  w.objects.push_back(make(5, Sphere{0.02}, Vec3(2.0, 0, 0.10)));  // behind the front camera
  w.gripper.pose.t = Vec3(0, 0, 2.5);
  const ViewFootprints vf(w, front);

  CHECK(relation_holds(vf, relation(Predicate::occludes, 2, 1)));
  CHECK_FALSE(relation_holds(vf, relation(Predicate::occludes, 1, 2)));
  CHECK(relation_holds(vf, relation(Predicate::overlaps, 2, 1)));
  CHECK(relation_holds(vf, relation(Predicate::inside_footprint, 2, 1)));

  CHECK_FALSE(relation_holds(vf, relation(Predicate::overlaps, 3, 4)));
  CHECK_FALSE(relation_holds(vf, relation(Predicate::occludes, 3, 4)));

  CHECK(vf.of(5).pixels.empty());
  for (Predicate p : {Predicate::overlaps, Predicate::occludes, Predicate::above_in_image,
                      Predicate::inside_footprint, Predicate::near_in_image}) {
    CHECK_FALSE(relation_holds(vf, relation(p, 5, 1, 100.0)));
    CHECK_FALSE(relation_holds(vf, relation(p, 1, 5, 100.0)));
  }
  CHECK_THROWS_AS(relation_holds(vf, relation(Predicate::overlaps, 1, 99)), std::invalid_argument);
  CHECK_THROWS_AS(relation_holds(vf, relation(Predicate::overlaps, 1, 1)), std::invalid_argument);
}

TEST_CASE("above_in_image against a plane region") {
  const auto cams = default_cameras();
  const Camera& right = camera(cams, "right");
  // The side camera sits at the plane height, so the plane's top row is the horizon row.
  CHECK(region_top_row(right, PlaneRegion{0.10, 0.45}) == doctest::Approx(31.5).epsilon(1e-9));
  WorldState w;
  w.objects.push_back(make(1, Sphere{0.02}, Vec3(0, 0, 0.25)));
  w.objects.push_back(make(2, Sphere{0.02}, Vec3(0, 0.2, 0.02)));
  w.gripper.pose.t = Vec3(0, 0, 2.5);
  const ViewFootprints vf(w, right);
  ProjectionRelation r;
  r.predicate = Predicate::above_in_image;
  r.subject = 1;
  r.region = PlaneRegion{0.10, 0.45};
  CHECK(relation_holds(vf, r));
  r.subject = 2;
  CHECK_FALSE(relation_holds(vf, r));
}

TEST_CASE("evaluate_views: conjunction semantics") {
  const auto cams = default_cameras();
  const auto ts = make_task_scene(TaskFamily::lift, 3);
  auto rec = evaluate_views(ts.scene.world, cams, {});
  CHECK(rec.label == 1);
  CHECK(rec.per_view.size() == cams.size());
  CHECK_THROWS_AS(evaluate_views(ts.scene.world, {}, {}), std::invalid_argument);

  // A relation limited to one view: the other view passes vacuously, the conjunction fails.
  ProjectionRelation r;
  r.predicate = Predicate::above_in_image;
  r.subject = ts.task.target_ids[0];
  r.region = PlaneRegion{0.5, 0.45};
  r.views = {"right"};
  const std::vector<Camera> two{camera(cams, "front"), camera(cams, "right")};
  rec = evaluate_views(ts.scene.world, two, {r});
  CHECK(rec.per_view == std::vector<bool>{true, false});
  CHECK(rec.label == 0);

  // Grasp-aligned scene satisfies the pick pre-task template in the four standard views.
  WorldState aligned = ts.scene.world;
  aligned.gripper.pose.t = aligned.at(ts.task.target_ids[0]).pose.t;
  const std::vector<Camera> four(cams.begin(), cams.begin() + 4);
  const auto pre = bind_relations(default_template(SkillFamily::pick).pre_task, ts.task);
  CHECK(evaluate_views(aligned, four, pre).label == 1);
  CHECK(ground_truth(aligned, ts.task, Stage::pre));
}

TEST_CASE("noiseless conjunction is monotone in the camera set") {
  const auto cams = default_cameras();
  for (SkillFamily s : {SkillFamily::pick, SkillFamily::place, SkillFamily::insert, SkillFamily::stack}) {
    const auto tmpl = default_template(s);
    for (std::uint64_t i = 0; i < 12; ++i) {
      const auto sc = make_study_scene(s, i % 3 == 0, i % 2 == 0 ? static_cast<int>(i % 5) : -1, cams, tmpl, 9, i);
      REQUIRE(sc);
      const auto rels = bind_relations(sc->stage == Stage::pre ? tmpl.pre_task : tmpl.post_task, sc->task);
      int prev = 1;
      for (std::size_t k = 1; k <= cams.size(); ++k) {
        const std::vector<Camera> sub(cams.begin(), cams.begin() + static_cast<long>(k));
        const int y = evaluate_views(sc->world, sub, rels).label;
        CHECK(y <= prev);
        prev = y;
      }
    }
  }
}

TEST_CASE("noisy_label: zero noise, invariant, flip rate, reproducibility") {
  const auto cams = default_cameras();
  const auto ts = make_task_scene(TaskFamily::stack, 1);
  const auto rels = bind_relations(default_template(SkillFamily::stack).post_task, ts.task);
  const auto clean = evaluate_views(ts.scene.world, cams, rels);
  const auto zero = noisy_label(ts.scene.world, cams, rels, {0.0, 5}, 7);
  CHECK(zero.per_view == clean.per_view);
  CHECK(zero.label == clean.label);

  CHECK_THROWS_AS(noisy_label(ts.scene.world, cams, rels, {0.5, 5}, 7), std::invalid_argument);
  CHECK_THROWS_AS(OracleErrorModel({-0.1, 0}).check(), std::invalid_argument);

  // No relations: every verdict is true before flipping, so false verdicts count flips.
  for (double p : {0.05, 0.2}) {
    long flips = 0, total = 0;
    for (std::uint64_t q = 0; q < 10000; ++q) {
      const auto rec = noisy_label(ts.scene.world, cams, {}, {p, 11}, q);
      for (bool v : rec.per_view) flips += v ? 0 : 1;
      total += static_cast<long>(rec.per_view.size());
    }
    CHECK(std::abs(static_cast<double>(flips) / total - p) <= 0.01);
  }

  const auto a = noisy_label(ts.scene.world, cams, rels, {0.3, 21}, 99);
  const auto b = noisy_label(ts.scene.world, cams, rels, {0.3, 21}, 99);
  CHECK(a.per_view == b.per_view);
  CHECK(a.label == b.label);

  // Camera prefixes share flips.
  const std::vector<Camera> two(cams.begin(), cams.begin() + 2);
  const auto c = noisy_label(ts.scene.world, two, rels, {0.3, 21}, 99);
  CHECK(c.per_view == std::vector<bool>(a.per_view.begin(), a.per_view.begin() + 2));

  CHECK(aggregate({true, true, false}, true) == 1);
  CHECK(aggregate({true, true, false}, false) == 0);
  CHECK(aggregate({true, false}, true) == 0);
}

TEST_CASE("two_stage_query for pick") {
  const auto cams = default_cameras();
  const std::vector<Camera> four(cams.begin(), cams.begin() + 4);
  const auto ts = make_task_scene(TaskFamily::lift, 2);
  const int target = ts.task.target_ids[0];
  WorldState pre = ts.scene.world;
  pre.gripper.pose.t = pre.at(target).pose.t;
  WorldState lifted = pre;
  lifted.find(target)->pose.t.z() += 0.2;
  lifted.gripper.pose.t.z() += 0.2;
  lifted.gripper.aperture = Aperture::closed;
  lifted.gripper.held = target;

  const auto tmpl = default_template(SkillFamily::pick);
  auto out = two_stage_query(pre, lifted, ts.task, tmpl, four, {0.0, 1}, 0);
  CHECK(out.pre.label == 1);
  CHECK(out.post.label == 1);
  CHECK(out.pre.stage == Stage::pre);
  CHECK(out.post.stage == Stage::post);

  out = two_stage_query(pre, pre, ts.task, tmpl, four, {0.0, 1}, 0);
  CHECK(out.pre.label == 1);
  CHECK(out.post.label == 0);

  CHECK_THROWS_AS(two_stage_query(pre, lifted, ts.task, default_template(SkillFamily::press), four, {0.0, 1}, 0),
                  std::invalid_argument);
}

TEST_CASE("template JSON round trip and validation") {
  for (SkillFamily s :
       {SkillFamily::pick, SkillFamily::place, SkillFamily::insert, SkillFamily::stack, SkillFamily::press}) {
    const auto t = default_template(s);
    CHECK_FALSE(t.pre_task.empty());
    CHECK_FALSE(t.post_task.empty());
    const auto j = template_to_json(t);
    CHECK(template_to_json(template_from_json(j)) == j);
  }
  auto j = template_to_json(default_template(SkillFamily::insert));
  j["post_task"][0]["object"] = j["post_task"][0]["subject"];
  CHECK_THROWS_AS(template_from_json(j), ConfigError);
  j = template_to_json(default_template(SkillFamily::insert));
  j["post_task"][0]["threshold_px"] = 0.0;
  CHECK_THROWS_AS(template_from_json(j), ConfigError);
  j = template_to_json(default_template(SkillFamily::insert));
  j["post_task"] = json::array();
  CHECK_THROWS_AS(template_from_json(j), ConfigError);
  CHECK_THROWS_AS(parse_predicate("beside"), ConfigError);

  TaskSpec task;
  task.family = TaskFamily::stack;
  task.target_ids = {4, 7};
  const auto rels = bind_relations(default_template(SkillFamily::stack).post_task, task);
  for (const auto& r : rels) CHECK(r.subject == 4);
  CHECK(rels[1].object == 7);
  const auto pre = bind_relations(default_template(SkillFamily::stack).pre_task, task);
  CHECK(pre[0].subject == 1000);
}

TEST_CASE("study scenes and accuracy table") {
  const auto cams = default_cameras();
  for (SkillFamily s : {SkillFamily::place, SkillFamily::stack}) {
    const auto tmpl = default_template(s);
    for (int view = 0; view < 5; ++view) {
      const auto sc = make_study_scene(s, false, view, cams, tmpl, 4, static_cast<std::uint64_t>(view));
      REQUIRE(sc);
      CHECK_FALSE(sc->truth);
      const auto rels = bind_relations(sc->stage == Stage::pre ? tmpl.pre_task : tmpl.post_task, sc->task);
      const auto rec = evaluate_views(sc->world, cams, rels);
      CHECK(rec.per_view[static_cast<std::size_t>(view)]);
      CHECK(rec.label == 0);
    }
  }

  StudyConfig cfg;
  cfg.trials = 100;
  cfg.err = {0.0, 3};
  const auto rows = view_count_study(SkillFamily::place, cams, default_template(SkillFamily::place), cfg);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].accuracy < 1.0);
  CHECK(rows[4].accuracy == doctest::Approx(1.0));
  for (std::size_t k = 1; k < rows.size(); ++k) CHECK(rows[k].accuracy >= rows[k - 1].accuracy);
  for (const auto& r : rows) CHECK(r.correct + r.incorrect == 100);

  const auto path = std::filesystem::temp_directory_path() / "prism_study_test.csv";
  write_study_csv(path, rows);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "k,correct,incorrect,accuracy");

  cfg.trials = 50;
  CHECK_THROWS_AS(view_count_study(SkillFamily::place, cams, default_template(SkillFamily::place), cfg),
                  std::invalid_argument);
}
