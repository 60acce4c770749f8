#include "prism/demo.hpp"

#include "prism/rng.hpp"

#include <spdlog/spdlog.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace prism {

std::vector<IdDepthImage> render_views(const WorldState& w, const std::vector<Camera>& cameras) {
  const auto items = render_items(w);
  std::vector<IdDepthImage> out;
  out.reserve(cameras.size());
  for (const auto& cam : cameras) out.push_back(rasterize(items, cam));
  return out;
}

namespace {

class Recorder {
 public:
  Recorder(WorldState start, const std::vector<Camera>& cams, const ScriptConfig& cfg, const WorldConfig& wcfg)
      : w_(std::move(start)), cams_(cams), cfg_(cfg), wcfg_(wcfg) {}

  void move_to(const Vec3& target) {
    for (int guard = 0; (target - w_.gripper.pose.t).norm() > 1e-9; ++guard) {
      if (guard > cfg_.step_budget) throw std::runtime_error("scripted demo: waypoint unreachable within step budget");
      Action a;
      a.delta_translation = (target - w_.gripper.pose.t).cwiseMax(-wcfg_.max_translation).cwiseMin(wcfg_.max_translation);
      const Vec3 before = w_.gripper.pose.t;
      record(a);
      if ((w_.gripper.pose.t - before).norm() < 1e-12) {
        throw std::runtime_error("scripted demo: motion blocked before reaching waypoint");
      }
    }
  }

  void command(GripperCommand c) {
    Action a;
    a.gripper_command = c;
    record(a);
  }

  Demonstration finish(const TaskSpec& task, std::string id) {
    DemoFrame last = frame_for(Action{});
    frames_.push_back(std::move(last));
    Demonstration d;
    d.id = std::move(id);
    d.task = task;
    d.frames = std::move(frames_);
    return d;
  }

  const WorldState& world() const { return w_; }

 private:
  DemoFrame frame_for(const Action& a) const {
    DemoFrame f;
    f.gripper = w_.gripper.pose;
    f.aperture = w_.gripper.aperture;
    f.action = a;
    if (cfg_.render) f.views = render_views(w_, cams_);
    return f;
  }

  void record(const Action& a) {
    frames_.push_back(frame_for(a));
    w_ = step(w_, a, wcfg_);
  }

  WorldState w_;
  const std::vector<Camera>& cams_;
  const ScriptConfig& cfg_;
  const WorldConfig& wcfg_;
  std::vector<DemoFrame> frames_;
};

}  // namespace

Demonstration generate_scripted_demo(const TaskScene& truth, std::uint64_t seed, const ScriptConfig& cfg,
                                     const WorldConfig& wcfg) {
  const auto& task = truth.task;
  const auto& w0 = truth.scene.world;
  for (int id : task.target_ids) {
    if (!w0.find(id)) throw std::runtime_error("scripted demo: scene lacks task target " + std::to_string(id));
  }
  Rng rng = make_rng(seed, "script");
  const double hover = cfg.hover + uniform(rng, -0.01, 0.01);
  Recorder rec(w0, truth.scene.cameras, cfg, wcfg);

  auto above = [&](const Vec3& p, double dz) { return Vec3(p.x(), p.y(), p.z() + dz); };
  const Vec3 target = w0.at(task.target_ids[0]).pose.t;

  auto grasp = [&] {
    rec.move_to(above(target, hover));
    rec.move_to(target);
    rec.command(GripperCommand::close);
    if (!rec.world().gripper.held) throw std::runtime_error("scripted demo: grasp failed");
  };

  switch (task.family) {
    case TaskFamily::lift:
      grasp();
      rec.move_to(above(target, cfg.lift));
      break;
    case TaskFamily::press: {
      const auto& b = w0.at(task.target_ids[0]);
      const double top = highest_point(b);
      rec.move_to(Vec3(b.pose.t.x(), b.pose.t.y(), top + hover));
      rec.move_to(Vec3(b.pose.t.x(), b.pose.t.y(), top - 0.7 * b.press_travel));
      break;
    }
    case TaskFamily::insert:
    case TaskFamily::pick_place:
    case TaskFamily::stack: {
      const auto& held = w0.at(task.target_ids[0]);
      const auto& dest = w0.at(task.target_ids[1]);
      const double below_origin = held.pose.t.z() - lowest_point(held);
      double release_z;
      double carry_z;
      if (task.family == TaskFamily::insert) {
        // Origin inside the holder's vertical extent, resting on the table after release.
        release_z = w0.table_height + held.support_height + cfg.release_gap;
        carry_z = highest_point(dest) + below_origin + 0.02;
      } else if (task.family == TaskFamily::pick_place) {
        release_z = w0.table_height + held.support_height + cfg.release_gap;
        carry_z = highest_point(dest) + below_origin + 0.02;
      } else {
        release_z = highest_point(dest) + below_origin + cfg.release_gap;
        carry_z = release_z + 0.02;
      }
      grasp();
      carry_z = std::max(carry_z, rec.world().gripper.pose.t.z());
      rec.move_to(Vec3(target.x(), target.y(), carry_z));
      rec.move_to(Vec3(dest.pose.t.x(), dest.pose.t.y(), carry_z));
      rec.move_to(Vec3(dest.pose.t.x(), dest.pose.t.y(), release_z));
      rec.command(GripperCommand::open);
      break;
    }
  }
  auto demo = rec.finish(task, "demo_" + to_string(task.family) + "_" + std::to_string(seed));
  if (!task_success(rec.world(), task, wcfg)) throw std::runtime_error("scripted demo: final frame misses the task");
  return demo;
}

SimDemonstration map_to_sim(const Demonstration& demo, const WorldState& scene, const WorldConfig& wcfg) {
  SimDemonstration sim;
  sim.demo_id = demo.id;
  sim.initial = scene;
  sim.frames.reserve(demo.frames.size());
  WorldState w = scene;
  for (std::size_t t = 0; t < demo.frames.size(); ++t) {
    const Action& a = demo.frames[t].action;
    sim.frames.push_back({w, a});
    if (t + 1 < demo.frames.size()) w = step(w, a, wcfg);
  }
  return sim;
}

std::vector<TrajectoryConstraint> extract_key_states(const Demonstration& demo, const WorldState& scene_for_binding,
                                                     double epsilon, const WorldConfig& wcfg) {
  std::vector<TrajectoryConstraint> out;
  if (demo.frames.empty()) throw std::invalid_argument("extract_key_states: empty demonstration");
  const auto sim = map_to_sim(demo, scene_for_binding, wcfg);
  for (std::size_t t = 0; t < demo.frames.size(); ++t) {
    const auto& f = demo.frames[t];
    if (f.action.gripper_command != GripperCommand::close || f.aperture != Aperture::open) continue;
    const auto& w = sim.frames[t].state;
    int best_id = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& o : w.objects) {
      if (!o.graspable) continue;
      const double d = (o.pose.t - f.gripper.t).norm();
      if (d < best_d) {
        best_d = d;
        best_id = o.id;
      }
    }
    if (best_id != 0) out.push_back({static_cast<int>(t), best_id, epsilon, false});
  }
  if (!demo.task.target_ids.empty()) {
    out.push_back({static_cast<int>(demo.frames.size()) - 1, demo.task.target_ids[0], epsilon, true});
  }
  if (out.empty()) spdlog::warn("demo {}: no gripper transition and no task target; no key states", demo.id);
  return out;
}

ReplayReport replay_report(const SimDemonstration& sim, const std::vector<TrajectoryConstraint>& constraints,
                           const TaskSpec& task, const WorldConfig& wcfg) {
  ReplayReport r;
  bool all = true;
  for (const auto& c : constraints) {
    ConstraintCheck chk{c, std::numeric_limits<double>::infinity(), false};
    if (c.timestep >= 0 && static_cast<std::size_t>(c.timestep) < sim.frames.size()) {
      const auto& w = sim.frames[static_cast<std::size_t>(c.timestep)].state;
      if (const auto* o = w.find(c.object_id)) {
        chk.residual = (w.gripper.pose.t - o->pose.t).norm();
        chk.satisfied = chk.residual <= c.epsilon;
      }
    }
    r.max_residual = std::max(r.max_residual, chk.residual);
    all = all && chk.satisfied;
    r.constraints.push_back(chk);
  }
  r.task_success = !sim.frames.empty() && task_success(sim.frames.back().state, task, wcfg);
  r.success = all && r.task_success;
  return r;
}

json action_to_json(const Action& a) {
  const char* grip = a.gripper_command == GripperCommand::open    ? "open"
                     : a.gripper_command == GripperCommand::close ? "close"
                                                                  : "hold";
  return {{"dt", {a.delta_translation.x(), a.delta_translation.y(), a.delta_translation.z()}},
          {"dyaw", a.delta_yaw},
          {"grip", grip}};
}

Action action_from_json(const json& j) {
  Action a;
  const auto& dt = j.at("dt");
  a.delta_translation = Vec3(dt.at(0).get<double>(), dt.at(1).get<double>(), dt.at(2).get<double>());
  a.delta_yaw = j.value("dyaw", 0.0);
  const auto g = j.value("grip", std::string("hold"));
  if (g == "open") {
    a.gripper_command = GripperCommand::open;
  } else if (g == "close") {
    a.gripper_command = GripperCommand::close;
  } else if (g == "hold") {
    a.gripper_command = GripperCommand::hold;
  } else {
    throw ConfigError("unknown gripper command '" + g + "'");
  }
  return a;
}

namespace {

constexpr char kBlobMagic[8] = {'P', 'R', 'I', 'M', 'G', '0', '0', '1'};

std::string encode_blob(const IdDepthImage& img) {
  std::string buf(kBlobMagic, sizeof kBlobMagic);
  auto put = [&buf](const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); };
  const std::int32_t wh[2] = {img.width, img.height};
  put(wh, sizeof wh);
  const double nf[2] = {img.near, img.far};
  put(nf, sizeof nf);
  put(img.ids.data(), img.ids.size() * sizeof(std::uint32_t));
  put(img.depth.data(), img.depth.size() * sizeof(double));
  return buf;
}

std::string hex64(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return s;
}

}  // namespace

std::string write_image_blob(const IdDepthImage& img, const std::filesystem::path& blob_dir) {
  const std::string buf = encode_blob(img);
  const std::string hash = hex64(fnv1a(buf));
  std::filesystem::create_directories(blob_dir);
  const auto path = blob_dir / (hash + ".img");
  if (!std::filesystem::exists(path)) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write blob " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  return hash;
}

IdDepthImage read_image_blob(const std::string& hash, const std::filesystem::path& blob_dir) {
  const auto path = blob_dir / (hash + ".img");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": missing image blob");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kBlobMagic + 24 || std::memcmp(buf.data(), kBlobMagic, sizeof kBlobMagic) != 0) {
    throw ConfigError(path.string() + ": not an image blob");
  }
  IdDepthImage img;
  std::size_t off = sizeof kBlobMagic;
  auto get = [&](void* p, std::size_t n) {
    if (off + n > buf.size()) throw ConfigError(path.string() + ": truncated image blob");
    std::memcpy(p, buf.data() + off, n);
    off += n;
  };
  std::int32_t wh[2];
  get(wh, sizeof wh);
  double nf[2];
  get(nf, sizeof nf);
  img.width = wh[0];
  img.height = wh[1];
  img.near = nf[0];
  img.far = nf[1];
  const auto n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  img.ids.resize(n);
  img.depth.resize(n);
  get(img.ids.data(), n * sizeof(std::uint32_t));
  get(img.depth.data(), n * sizeof(double));
  return img;
}

json demo_to_json(const Demonstration& demo, const std::optional<std::filesystem::path>& blob_dir) {
  json frames = json::array();
  for (const auto& f : demo.frames) {
    json refs = json::array();
    if (blob_dir) {
      for (const auto& v : f.views) refs.push_back(write_image_blob(v, *blob_dir));
    } else {
      for (const auto& r : f.obs_refs) refs.push_back(r);
    }
    frames.push_back({{"gripper", {{"pose", pose_to_json(f.gripper)}}},
                      {"aperture", f.aperture == Aperture::open ? "open" : "closed"},
                      {"action", action_to_json(f.action)},
                      {"obs_refs", refs}});
  }
  return {{"id", demo.id}, {"task", task_to_json(demo.task)}, {"frames", frames}, {"source", demo.source}};
}

Demonstration demo_from_json(const json& j, const std::optional<std::filesystem::path>& blob_dir) {
  Demonstration d;
  d.id = j.at("id").get<std::string>();
  d.task = task_from_json(j.at("task"));
  d.source = j.value("source", std::string("recorded"));
  for (const auto& fj : j.at("frames")) {
    DemoFrame f;
    f.gripper = pose_from_json(fj.at("gripper").at("pose"));
    f.aperture = fj.value("aperture", std::string("open")) == "closed" ? Aperture::closed : Aperture::open;
    f.action = action_from_json(fj.at("action"));
    if (fj.contains("obs_refs")) f.obs_refs = fj.at("obs_refs").get<std::vector<std::string>>();
    if (blob_dir) {
      for (const auto& h : f.obs_refs) f.views.push_back(read_image_blob(h, *blob_dir));
    }
    d.frames.push_back(std::move(f));
  }
  if (d.frames.empty()) throw ConfigError("demonstration '" + d.id + "' has no frames");
  return d;
}

json replay_report_to_json(const ReplayReport& r) {
  json cs = json::array();
  for (const auto& c : r.constraints) {
    cs.push_back({{"timestep", c.constraint.timestep},
                  {"object_id", c.constraint.object_id},
                  {"epsilon", c.constraint.epsilon},
                  {"kind", c.constraint.final_state ? "task_final" : "gripper_alignment"},
                  {"residual", c.residual},
                  {"satisfied", c.satisfied}});
  }
  return {{"success", r.success}, {"task_success", r.task_success}, {"max_residual", r.max_residual}, {"constraints", cs}};
}

}  // namespace prism
