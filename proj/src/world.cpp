#include "prism/world.hpp"

#include "prism/collision.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace prism {

const SceneObject* WorldState::find(int id) const {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

SceneObject* WorldState::find(int id) {
  for (auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

const SceneObject& WorldState::at(int id) const {
  const auto* o = find(id);
  if (!o) throw std::out_of_range("unknown object id " + std::to_string(id));
  return *o;
}

Action clamp_action(const Action& a, const WorldConfig& cfg) {
  Action out = a;
  for (int i = 0; i < 3; ++i) {
    double v = a.delta_translation[i];
    if (!std::isfinite(v)) v = 0.0;
    out.delta_translation[i] = std::clamp(v, -cfg.max_translation, cfg.max_translation);
  }
  out.delta_yaw = std::isfinite(a.delta_yaw) ? std::clamp(a.delta_yaw, -cfg.max_yaw, cfg.max_yaw) : 0.0;
  return out;
}

double lowest_point(const SceneObject& obj) { return -support(obj.shape, obj.pose, Vec3(0, 0, -1)); }
double highest_point(const SceneObject& obj) { return support(obj.shape, obj.pose, Vec3::UnitZ()); }

namespace {

constexpr double kRayStart = 10.0;

struct VerticalExtent {
  double bottom_rel;  // relative to the object's origin z
  double top_rel;
};

/// Vertical line through world (x, y) against the object, independent of its origin height.
std::optional<VerticalExtent> vertical_extent(const SceneObject& obj, double x, double y) {
  const Quat qi = obj.pose.q.conjugate();
  const Vec3 o = qi * Vec3(x - obj.pose.t.x(), y - obj.pose.t.y(), kRayStart);
  const Vec3 d = qi * Vec3(0, 0, -1);
  const auto hit = intersect_local(obj.shape, o, d);
  if (!hit) return std::nullopt;
  return VerticalExtent{kRayStart - hit->t_out, kRayStart - hit->t_in};
}

struct FootSample {
  double x;
  double y;
  double bottom_rel;
};

std::vector<FootSample> footprint(const SceneObject& obj, int n) {
  const Pose rot{Vec3::Zero(), obj.pose.q};
  const double xlo = -support(obj.shape, rot, -Vec3::UnitX()), xhi = support(obj.shape, rot, Vec3::UnitX());
  const double ylo = -support(obj.shape, rot, -Vec3::UnitY()), yhi = support(obj.shape, rot, Vec3::UnitY());
  constexpr double inset = 0.999;
  std::vector<FootSample> out;
  out.reserve(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    const double fx = n == 1 ? 0.5 : static_cast<double>(i) / (n - 1);
    const double x = obj.pose.t.x() + inset * (xlo + fx * (xhi - xlo));
    for (int j = 0; j < n; ++j) {
      const double fy = n == 1 ? 0.5 : static_cast<double>(j) / (n - 1);
      const double y = obj.pose.t.y() + inset * (ylo + fy * (yhi - ylo));
      if (const auto e = vertical_extent(obj, x, y)) out.push_back({x, y, e->bottom_rel});
    }
  }
  if (out.empty()) out.push_back({obj.pose.t.x(), obj.pose.t.y(), -resting_offset(obj.shape, obj.pose.q)});
  return out;
}

double planar_radius(const SceneObject& o) {
  const Pose rot{Vec3::Zero(), o.pose.q};
  double r = 0.0;
  for (const Vec3& d : {Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0), Vec3(0, -1, 0)}) {
    r = std::max(r, support(o.shape, rot, d));
  }
  return r * std::sqrt(2.0);
}

bool may_overlap_xy(const SceneObject& a, const SceneObject& b) {
  return (a.pose.t.head<2>() - b.pose.t.head<2>()).norm() <= planar_radius(a) + planar_radius(b);
}

bool interacts(const SceneObject& o) { return !o.container; }

struct Rest {
  double z = 0.0;
  int parent = 0;
  int slide_from = -1;  // index of a supporter overlapped by less than the stacking fraction
  double z_all = 0.0;   // rest height counting every overlapped supporter
  int parent_all = 0;
};

Rest rest_for(const WorldState& w, std::size_t i, const std::vector<std::size_t>& below, const WorldConfig& cfg) {
  const SceneObject& o = w.objects[i];
  Rest r;
  r.z = r.z_all = w.table_height + resting_offset(o.shape, o.pose.q);
  const auto samples = footprint(o, cfg.footprint_samples);
  for (std::size_t j : below) {
    const SceneObject& s = w.objects[j];
    if (!may_overlap_xy(o, s)) continue;
    int hits = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& p : samples) {
      if (const auto e = vertical_extent(s, p.x, p.y)) {
        ++hits;
        best = std::max(best, s.pose.t.z() + e->top_rel - p.bottom_rel);
      }
    }
    if (hits == 0) continue;
    const double frac = static_cast<double>(hits) / static_cast<double>(samples.size());
    if (best > r.z_all) {
      r.z_all = best;
      r.parent_all = s.id;
    }
    if (frac < cfg.stack_overlap_frac) {
      if (r.slide_from < 0) r.slide_from = static_cast<int>(j);
      continue;
    }
    if (best > r.z) {
      r.z = best;
      r.parent = s.id;
    }
  }
  return r;
}

/// Planar overlap test: sampled footprint, or exact penetration with o moved level with s.
bool overlaps_xy(const SceneObject& o, const SceneObject& s, int samples) {
  if (footprint_overlap(o, s, samples) > 0.0) return true;
  Pose level = o.pose;
  level.t.z() = s.pose.t.z();
  return penetration(o.shape, level, s.shape, s.pose) > 0.0;
}

void slide_off(SceneObject& o, const SceneObject& s, int samples) {
  Vec2 dir = o.pose.t.head<2>() - s.pose.t.head<2>();
  if (dir.norm() < 1e-12) dir = Vec2::UnitX();
  dir.normalize();
  const Vec2 start = o.pose.t.head<2>();
  double lo = 0.0, hi = planar_radius(o) + planar_radius(s);
  for (int it = 0; it < 30; ++it) {
    const double mid = 0.5 * (lo + hi);
    o.pose.t.head<2>() = start + dir * mid;
    (overlaps_xy(o, s, samples) ? lo : hi) = mid;
  }
  o.pose.t.head<2>() = start + dir * (hi + 1e-6);
}

double table_rest(const WorldState& w, const SceneObject& o) {
  return w.table_height + resting_offset(o.shape, o.pose.q);
}

}  // namespace

double footprint_overlap(const SceneObject& obj, const SceneObject& other, int samples) {
  if (!may_overlap_xy(obj, other)) return 0.0;
  const auto fp = footprint(obj, samples);
  int hits = 0;
  for (const auto& p : fp) {
    if (vertical_extent(other, p.x, p.y)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(fp.size());
}

std::vector<Contact> check_collision(const WorldState& w, const WorldConfig& cfg) {
  std::vector<Contact> out;
  const auto n = w.objects.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = w.objects[i];
    const double floor = w.table_height - a.press_travel;
    const double low = lowest_point(a);
    if (low < floor - 1e-6) out.push_back({a.id, 0, floor - low});
    if (!interacts(a)) continue;
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& b = w.objects[j];
      if (!interacts(b)) continue;
      const double d = penetration(a.shape, a.pose, b.shape, b.pose);
      if (d > cfg.contact_tolerance) out.push_back({a.id, b.id, d});
    }
  }
  return out;
}

WorldState settle(const WorldState& w, const WorldConfig& cfg) {
  WorldState out = w;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < out.objects.size(); ++i) {
    const auto& o = out.objects[i];
    if (out.is_held(o.id)) continue;
    if (o.container) {
      out.objects[i].pose.t.z() = table_rest(out, o);
      continue;
    }
    order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double la = lowest_point(out.objects[a]), lb = lowest_point(out.objects[b]);
    if (la != lb) return la < lb;
    return out.objects[a].id < out.objects[b].id;
  });

  std::vector<std::size_t> placed;
  for (std::size_t i : order) {
    constexpr int kMaxSlides = 4;
    Rest r;
    for (int attempt = 0;; ++attempt) {
      r = rest_for(out, i, placed, cfg);
      if (r.slide_from < 0) break;
      if (attempt == kMaxSlides) {
        r.z = r.z_all;
        r.parent = r.parent_all;
        break;
      }
      slide_off(out.objects[i], out.objects[static_cast<std::size_t>(r.slide_from)], cfg.footprint_samples);
    }
    SceneObject& o = out.objects[i];
    if (o.press_travel > 0.0) {
      o.pose.t.z() = std::clamp(o.pose.t.z(), r.z - o.press_travel, r.z);
    } else {
      o.pose.t.z() = r.z;
    }
    // Sampled footprints can miss the contact point of curved supporters; lift out of residual overlap.
    auto worst_at = [&](double z) {
      const double z0 = o.pose.t.z();
      o.pose.t.z() = z;
      double worst = 0.0;
      for (std::size_t j : placed) {
        const auto& s = out.objects[j];
        worst = std::max(worst, penetration(o.shape, o.pose, s.shape, s.pose));
      }
      o.pose.t.z() = z0;
      return worst;
    };
    const double tol = 0.5 * cfg.contact_tolerance;
    if (worst_at(o.pose.t.z()) > tol) {
      double lo = o.pose.t.z();
      double step = std::max(worst_at(lo), 1e-4);
      double hi = lo + step;
      for (int it = 0; it < 60 && worst_at(hi) > tol; ++it) {
        lo = hi;
        step *= 2.0;
        hi += step;
      }
      for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        (worst_at(mid) > tol ? lo : hi) = mid;
      }
      o.pose.t.z() = hi;
    }
    placed.push_back(i);
  }
  return out;
}

std::optional<int> support_parent(const WorldState& w, int id, const WorldConfig& cfg) {
  if (w.is_held(id)) return std::nullopt;
  std::size_t idx = w.objects.size();
  for (std::size_t i = 0; i < w.objects.size(); ++i) {
    if (w.objects[i].id == id) idx = i;
  }
  if (idx == w.objects.size()) throw std::out_of_range("unknown object id " + std::to_string(id));
  const auto& o = w.objects[idx];
  std::vector<std::size_t> below;
  for (std::size_t j = 0; j < w.objects.size(); ++j) {
    const auto& s = w.objects[j];
    if (j == idx || !interacts(s) || w.is_held(s.id)) continue;
    if (lowest_point(s) < lowest_point(o)) below.push_back(j);
  }
  const Rest r = rest_for(w, idx, below, cfg);
  constexpr double kTol = 1e-5;
  if (o.press_travel > 0.0) {
    if (o.pose.t.z() <= r.z + kTol && o.pose.t.z() >= r.z - o.press_travel - kTol) return r.parent;
    return std::nullopt;
  }
  if (std::abs(o.pose.t.z() - r.z) <= kTol + cfg.contact_tolerance) return r.parent;
  return std::nullopt;
}

namespace {

bool held_pose_ok(const WorldState& w, std::size_t held_idx, const Pose& pose, const WorldConfig& cfg) {
  SceneObject probe = w.objects[held_idx];
  probe.pose = pose;
  if (lowest_point(probe) < w.table_height - 1e-6) return false;
  if (!interacts(probe)) return true;
  for (std::size_t j = 0; j < w.objects.size(); ++j) {
    if (j == held_idx || !interacts(w.objects[j])) continue;
    const auto& s = w.objects[j];
    if (penetration(probe.shape, probe.pose, s.shape, s.pose) > cfg.contact_tolerance) return false;
  }
  return true;
}

Pose gripper_at(const Pose& from, const Vec3& dt, double dyaw, double s) {
  Pose p;
  p.t = from.t + s * dt;
  p.q = canonical(Quat(Eigen::AngleAxisd(s * dyaw, Vec3::UnitZ())) * from.q);
  return p;
}

}  // namespace

WorldState step(const WorldState& w, const Action& raw, const WorldConfig& cfg) {
  const Action a = clamp_action(raw, cfg);
  WorldState out = w;
  auto& g = out.gripper;

  Vec3 target = g.pose.t + a.delta_translation;
  target = target.cwiseMax(cfg.workspace_lo).cwiseMin(cfg.workspace_hi);
  target.z() = std::max(target.z(), out.table_height);
  const Vec3 dt = target - g.pose.t;
  const double dyaw = a.delta_yaw;

  double s_ok = 1.0;
  std::size_t held_idx = out.objects.size();
  if (g.held) {
    for (std::size_t i = 0; i < out.objects.size(); ++i) {
      if (out.objects[i].id == *g.held) held_idx = i;
    }
  }
  if (held_idx < out.objects.size() && (dt.squaredNorm() > 0.0 || dyaw != 0.0)) {
    auto ok = [&](double s) {
      return held_pose_ok(out, held_idx, compose(gripper_at(w.gripper.pose, dt, dyaw, s), g.grasp_offset), cfg);
    };
    if (ok(0.0)) {
      constexpr int kSub = 4;
      double prev = 0.0;
      for (int k = 1; k <= kSub; ++k) {
        const double s = static_cast<double>(k) / kSub;
        if (ok(s)) {
          prev = s;
          continue;
        }
        double lo = prev, hi = s;
        for (int it = 0; it < 30; ++it) {
          const double mid = 0.5 * (lo + hi);
          (ok(mid) ? lo : hi) = mid;
        }
        prev = lo;
        break;
      }
      s_ok = prev;
    }
  }
  g.pose = gripper_at(w.gripper.pose, dt, dyaw, s_ok);
  if (held_idx < out.objects.size()) out.objects[held_idx].pose = compose(g.pose, g.grasp_offset);

  // Support structure only changes on grasp, release or a button press; otherwise a settled input stays settled.
  bool restructured = false;

  // Push buttons under the gripper point.
  for (auto& o : out.objects) {
    if (o.press_travel <= 0.0 || out.is_held(o.id)) continue;
    const auto e = vertical_extent(o, g.pose.t.x(), g.pose.t.y());
    if (!e) continue;
    const double top = o.pose.t.z() + e->top_rel;
    if (g.pose.t.z() < top) {
      const double rest = table_rest(out, o);
      const double z = std::max(rest - o.press_travel, o.pose.t.z() - (top - g.pose.t.z()));
      restructured = restructured || z != o.pose.t.z();
      o.pose.t.z() = z;
    }
  }

  switch (a.gripper_command) {
    case GripperCommand::close:
      if (g.aperture == Aperture::open) {
        g.aperture = Aperture::closed;
        const SceneObject* best = nullptr;
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto& o : out.objects) {
          if (!o.graspable) continue;
          const double d = (o.pose.t - g.pose.t).norm();
          if (d <= cfg.grasp_radius && (d < best_d || (d == best_d && best && o.id < best->id))) {
            best = &o;
            best_d = d;
          }
        }
        if (best) {
          g.held = best->id;
          g.grasp_offset = compose(invert(g.pose), best->pose);
          restructured = true;
        }
      }
      break;
    case GripperCommand::open:
      restructured = restructured || g.held.has_value();
      g.aperture = Aperture::open;
      g.held.reset();
      g.grasp_offset = Pose::identity();
      break;
    case GripperCommand::hold:
      break;
  }

  if (restructured) out = settle(out, cfg);
  out.step_count = w.step_count + 1;
  return out;
}

std::vector<RenderItem> render_items(const WorldState& w, bool with_gripper) {
  std::vector<RenderItem> items;
  items.reserve(w.objects.size() + 1);
  for (const auto& o : w.objects) items.push_back({o.id, o.shape, o.pose});
  if (with_gripper) items.push_back({kGripperId, Sphere{kGripperProxyRadius}, Pose{w.gripper.pose.t, Quat::Identity()}});
  return items;
}

TaskFamily parse_task_family(const std::string& s) {
  if (s == "lift") return TaskFamily::lift;
  if (s == "press") return TaskFamily::press;
  if (s == "insert") return TaskFamily::insert;
  if (s == "pick_place" || s == "pick-place" || s == "place") return TaskFamily::pick_place;
  if (s == "stack") return TaskFamily::stack;
  throw std::invalid_argument("unknown task family '" + s + "'");
}

std::string to_string(TaskFamily f) {
  switch (f) {
    case TaskFamily::lift:
      return "lift";
    case TaskFamily::press:
      return "press";
    case TaskFamily::insert:
      return "insert";
    case TaskFamily::pick_place:
      return "pick_place";
    case TaskFamily::stack:
      return "stack";
  }
  return "unknown";
}

double TaskSpec::threshold(const std::string& key, double fallback) const {
  const auto it = thresholds.find(key);
  return it == thresholds.end() ? fallback : it->second;
}

bool task_success(const WorldState& w, const TaskSpec& task, const WorldConfig& cfg) {
  auto need = [&](std::size_t n) {
    if (task.target_ids.size() < n) {
      throw std::invalid_argument(to_string(task.family) + " task needs " + std::to_string(n) + " target ids");
    }
  };
  switch (task.family) {
    case TaskFamily::lift: {
      need(1);
      const auto& o = w.at(task.target_ids[0]);
      const double rise = o.pose.t.z() - (w.table_height + o.support_height);
      return w.is_held(o.id) && rise >= task.threshold("lift_height", 0.10);
    }
    case TaskFamily::press: {
      need(1);
      const auto& o = w.at(task.target_ids[0]);
      return o.pose.t.z() <= table_rest(w, o) - task.threshold("press_depth", 0.005);
    }
    case TaskFamily::insert: {
      need(2);
      const auto& o = w.at(task.target_ids[0]);
      const auto& r = w.at(task.target_ids[1]);
      const double xy = (o.pose.t.head<2>() - r.pose.t.head<2>()).norm();
      return xy <= task.threshold("insert_tolerance", 0.015) && o.pose.t.z() <= highest_point(r) &&
             o.pose.t.z() >= lowest_point(r);
    }
    case TaskFamily::pick_place: {
      need(2);
      const auto& o = w.at(task.target_ids[0]);
      const auto& c = w.at(task.target_ids[1]);
      if (w.is_held(o.id)) return false;
      if (!support_parent(w, o.id, cfg)) return false;
      return footprint_overlap(o, c, cfg.footprint_samples) >= task.threshold("inside_fraction", 1.0);
    }
    case TaskFamily::stack: {
      need(2);
      const auto parent = support_parent(w, task.target_ids[0], cfg);
      return parent && *parent == task.target_ids[1];
    }
  }
  return false;
}

}  // namespace prism
