#include "prism/scene_io.hpp"

#include <fstream>
#include <sstream>

namespace prism {

std::vector<Camera> default_cameras() {
  std::vector<Camera> cams;
  auto add = [&cams](Camera c, double focal) {
    c.focal = focal;
    c.width = c.height = 64;
    c.principal = Vec2(31.5, 31.5);
    c.near = 0.05;
    c.far = 3.0;
    cams.push_back(std::move(c));
  };
  add(look_at("scene", Vec3(0.55, 0.0, 0.55), Vec3(0.0, 0.0, 0.04)), 72.0);
  add(look_at("right", Vec3(0.0, 0.75, 0.10), Vec3(0.0, 0.0, 0.10)), 80.0);
  add(look_at("front", Vec3(0.75, 0.0, 0.10), Vec3(0.0, 0.0, 0.10)), 80.0);
  add(look_at("bird", Vec3(0.0, 0.0, 0.85), Vec3(0.0, 0.0, 0.0), Vec3::UnitX()), 80.0);
  add(look_at("left", Vec3(-0.45, -0.5, 0.45), Vec3(0.0, 0.0, 0.05)), 72.0);
  return cams;
}

json pose_to_json(const Pose& p) {
  const Quat q = canonical(p.q);
  return {{"t", {p.t.x(), p.t.y(), p.t.z()}}, {"q", {q.w(), q.x(), q.y(), q.z()}}};
}

Pose pose_from_json(const json& j) {
  const auto& t = j.at("t");
  Pose p;
  p.t = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
  if (j.contains("q")) {
    const auto& q = j.at("q");
    const Quat raw(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>());
    if (raw.norm() < 1e-12) throw ConfigError("pose quaternion has zero norm");
    p.q = canonical(raw);
  }
  return p;
}

json shape_to_json(const Shape& s) {
  if (const auto* b = std::get_if<Box>(&s)) {
    return {{"kind", "box"}, {"params", {b->half_extents.x(), b->half_extents.y(), b->half_extents.z()}}};
  }
  if (const auto* sp = std::get_if<Sphere>(&s)) return {{"kind", "sphere"}, {"params", {sp->radius}}};
  const auto& c = std::get<Cylinder>(s);
  return {{"kind", "cylinder"}, {"params", {c.radius, c.half_height}}};
}

Shape shape_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  const auto& p = j.at("params");
  Shape s;
  if (kind == "box") {
    s = Box{Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>())};
  } else if (kind == "sphere") {
    s = Sphere{p.at(0).get<double>()};
  } else if (kind == "cylinder") {
    s = Cylinder{p.at(0).get<double>(), p.at(1).get<double>()};
  } else {
    throw ConfigError("unknown shape kind '" + kind + "'");
  }
  if (!shape_valid(s)) throw ConfigError("shape dimensions must be strictly positive");
  return s;
}

json camera_to_json(const Camera& c) {
  return {{"name", c.name},
          {"pose", pose_to_json(c.pose)},
          {"focal", c.focal},
          {"principal", {c.principal.x(), c.principal.y()}},
          {"width", c.width},
          {"height", c.height},
          {"near", c.near},
          {"far", c.far}};
}

Camera camera_from_json(const json& j) {
  Camera c;
  c.name = j.value("name", std::string{});
  c.pose = pose_from_json(j.at("pose"));
  c.focal = j.at("focal").get<double>();
  c.principal = Vec2(j.at("principal").at(0).get<double>(), j.at("principal").at(1).get<double>());
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.near = j.at("near").get<double>();
  c.far = j.at("far").get<double>();
  if (!c.valid()) throw ConfigError("camera '" + c.name + "' violates focal > 0, 0 < near < far, resolution >= 8x8");
  return c;
}

json object_to_json(const SceneObject& o) {
  json j = {{"id", o.id},
            {"name", o.name},
            {"shape", shape_to_json(o.shape)},
            {"pose", pose_to_json(o.pose)},
            {"graspable", o.graspable}};
  if (o.container) j["container"] = true;
  if (o.press_travel > 0.0) j["press_travel"] = o.press_travel;
  return j;
}

SceneObject object_from_json(const json& j) {
  SceneObject o;
  o.id = j.at("id").get<int>();
  if (o.id <= 0 || o.id == kGripperId) throw ConfigError("object id must be positive and not " + std::to_string(kGripperId));
  o.name = j.value("name", std::string{});
  o.shape = shape_from_json(j.at("shape"));
  o.pose = pose_from_json(j.at("pose"));
  o.graspable = j.value("graspable", true);
  o.container = j.value("container", false);
  o.press_travel = j.value("press_travel", 0.0);
  o.refresh_support_height();
  return o;
}

json gripper_to_json(const GripperState& g) {
  json j = {{"pose", pose_to_json(g.pose)}, {"aperture", g.aperture == Aperture::open ? "open" : "closed"}};
  j["held"] = g.held ? json(*g.held) : json(nullptr);
  if (g.held) j["grasp_offset"] = pose_to_json(g.grasp_offset);
  return j;
}

GripperState gripper_from_json(const json& j) {
  GripperState g;
  g.pose = pose_from_json(j.at("pose"));
  const auto ap = j.value("aperture", std::string("open"));
  if (ap != "open" && ap != "closed") throw ConfigError("gripper aperture must be 'open' or 'closed'");
  g.aperture = ap == "open" ? Aperture::open : Aperture::closed;
  if (j.contains("held") && !j.at("held").is_null()) {
    g.held = j.at("held").get<int>();
    if (g.aperture != Aperture::closed) throw ConfigError("gripper holds an object but is open");
    g.grasp_offset = j.contains("grasp_offset") ? pose_from_json(j.at("grasp_offset")) : Pose::identity();
  }
  return g;
}

json world_to_json(const WorldState& w) {
  json objs = json::array();
  for (const auto& o : w.objects) objs.push_back(object_to_json(o));
  return {{"table_height", w.table_height}, {"objects", objs}, {"gripper", gripper_to_json(w.gripper)}, {"step_count", w.step_count}};
}

WorldState world_from_json(const json& j) {
  WorldState w;
  w.table_height = j.value("table_height", 0.0);
  for (const auto& o : j.at("objects")) {
    auto obj = object_from_json(o);
    if (w.find(obj.id)) throw ConfigError("duplicate object id " + std::to_string(obj.id));
    w.objects.push_back(std::move(obj));
  }
  if (j.contains("gripper")) w.gripper = gripper_from_json(j.at("gripper"));
  if (w.gripper.held && !w.find(*w.gripper.held)) throw ConfigError("gripper holds unknown object");
  w.step_count = j.value("step_count", 0);
  return w;
}

json scene_to_json(const Scene& s) {
  json j = world_to_json(s.world);
  json cams = json::array();
  for (const auto& c : s.cameras) cams.push_back(camera_to_json(c));
  j["cameras"] = cams;
  return j;
}

Scene scene_from_json(const json& j) {
  Scene s;
  s.world = world_from_json(j);
  if (j.contains("cameras")) {
    for (const auto& c : j.at("cameras")) s.cameras.push_back(camera_from_json(c));
  }
  if (s.cameras.empty()) s.cameras = default_cameras();
  return s;
}

json task_to_json(const TaskSpec& t) {
  return {{"family", to_string(t.family)}, {"target_ids", t.target_ids}, {"thresholds", t.thresholds}};
}

TaskSpec task_from_json(const json& j) {
  TaskSpec t;
  try {
    t.family = parse_task_family(j.at("family").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  t.target_ids = j.at("target_ids").get<std::vector<int>>();
  if (j.contains("thresholds")) t.thresholds = j.at("thresholds").get<std::map<std::string, double>>();
  return t;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError(path.string() + ": cannot write file");
  out << j.dump(2) << '\n';
}

namespace {

template <class F>
auto with_path(const std::filesystem::path& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace

Scene load_scene(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  return with_path(path, [&] { return scene_from_json(j); });
}

TaskSpec load_task(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  return with_path(path, [&] { return task_from_json(j); });
}

}  // namespace prism
