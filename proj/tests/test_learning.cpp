#include "gradcheck.hpp"

#include "prism/demo.hpp"
#include "prism/library.hpp"
#include "prism/reward.hpp"
#include "prism/sac.hpp"
#include "prism/training.hpp"
#include "prism/collision.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace prism;

namespace {

std::vector<IdDepthImage> render4(const WorldState& w) {
  auto cams = default_cameras();
  cams.resize(4);
  return render_views(w, cams);
}

WorldState two_spheres(const Vec3& a, const Vec3& b) {
  WorldState w;
  SceneObject s1{1, "a", Sphere{0.02}, Pose::identity()};
  s1.pose.t = a;
  SceneObject s2{2, "b", Sphere{0.02}, Pose::identity()};
  s2.pose.t = b;
  w.objects = {s1, s2};
  w.gripper.pose = Pose::identity();
  w.gripper.pose.t = Vec3(0.0, 0.0, 0.4);
  return w;
}

FeatureLayout tiny_layout() { return reward_layout({5}, 1, 4); }

FeatureVector random_tiny(Rng& rng, const FeatureLayout& l) {
  FeatureVector x(static_cast<std::size_t>(l.dim()), 0.0);
  for (int i = 0; i < l.image_dim(); ++i) x[static_cast<std::size_t>(i)] = static_cast<double>(rng() % 256) / 255.0;
  for (int i = l.image_dim(); i < l.dim(); ++i) x[static_cast<std::size_t>(i)] = uniform(rng, -1.0, 1.0);
  return x;
}

Transition tagged(double tag, bool demo) {
  Transition t;
  t.reward = tag;
  t.is_demo = demo;
  return t;
}

}  // namespace

TEST_CASE("encode: empty views give far depth and empty masks") {
  const auto cams = default_cameras();
  std::vector<IdDepthImage> views;
  for (int i = 0; i < 4; ++i) views.push_back(rasterize(std::span<const RenderItem>{}, cams[static_cast<std::size_t>(i)]));
  const auto layout = reward_layout({3, 4});
  const auto x = encode(views, layout, Aperture::open, Action{});
  REQUIRE(static_cast<int>(x.size()) == layout.dim());
  for (int v = 0; v < 4; ++v) {
    for (int c = 0; c < layout.cells(); ++c) CHECK(x[static_cast<std::size_t>(v * layout.view_block() + c)] == 1.0);
    for (int c = layout.cells(); c < layout.view_block(); ++c) {
      CHECK(x[static_cast<std::size_t>(v * layout.view_block() + c)] == 0.0);
    }
  }
  CHECK(x[static_cast<std::size_t>(layout.image_dim())] == 0.0);
  CHECK(x[static_cast<std::size_t>(layout.image_dim() + 5)] == 0.0);  // hold
  CHECK_THROWS_AS(encode({views[0]}, layout, Aperture::open, Action{}), std::invalid_argument);
}

TEST_CASE("encode: deterministic, local, and losslessly packed") {
  const auto layout = reward_layout({1, 2});
  const WorldState w0 = two_spheres(Vec3(0.10, -0.15, 0.05), Vec3(-0.12, 0.15, 0.05));
  Action act;
  act.delta_translation = Vec3(0.05, -0.02, 0.0);
  act.gripper_command = GripperCommand::close;
  const auto x0 = encode(render4(w0), layout, Aperture::open, act);
  CHECK(x0 == encode(render4(w0), layout, Aperture::open, act));
  CHECK(x0[static_cast<std::size_t>(layout.image_dim() + 1)] == doctest::Approx(1.0));
  CHECK(x0[static_cast<std::size_t>(layout.image_dim() + 5)] == 1.0);

  WorldState w1 = w0;
  w1.objects[0].pose.t += Vec3(0.02, 0.01, 0.0);
  const auto x1 = encode(render4(w1), layout, Aperture::open, act);
  int changed = 0;
  for (int v = 0; v < 4; ++v) {
    const int base = v * layout.view_block();
    for (int c = 0; c < layout.cells(); ++c) {
      const auto i = static_cast<std::size_t>(base + c);
      const auto ma = static_cast<std::size_t>(base + layout.cells() + c);
      if (x0[i] != x1[i]) {
        ++changed;
        CHECK((x0[ma] == 1.0 || x1[ma] == 1.0));
      }
      for (int m = 2; m < layout.channels(); ++m) {  // sphere 2 and gripper masks untouched
        const auto j = static_cast<std::size_t>(base + m * layout.cells() + c);
        CHECK(x0[j] == x1[j]);
      }
    }
  }
  CHECK(changed > 0);

  const auto p = pack(x1, layout);
  CHECK(p.unpack() == x1);
  FeatureVector bad = x1;
  bad.pop_back();
  CHECK_THROWS_AS(pack(bad, layout), std::invalid_argument);

  const auto sv = select_view(x1, layout, 2);
  const auto sl = single_view_layout(layout);
  REQUIRE(static_cast<int>(sv.size()) == sl.dim());
  CHECK(sv[0] == x1[static_cast<std::size_t>(2 * layout.view_block())]);
  CHECK(sv.back() == x1.back());
}

TEST_CASE("encode: action round trip and policy features") {
  Action a;
  a.delta_translation = Vec3(0.05, -0.025, 0.0);
  a.delta_yaw = -0.1;
  a.gripper_command = GripperCommand::open;
  const auto v = encode_action(a);
  CHECK(v[0] == 1.0);
  CHECK(v[1] == doctest::Approx(-0.5));
  CHECK(v[3] == doctest::Approx(-0.5));
  CHECK(v[4] == -1.0);
  const Action b = decode_action(v);
  CHECK((b.delta_translation - a.delta_translation).norm() < 1e-15);
  CHECK(b.gripper_command == GripperCommand::open);

  const auto ts = make_task_scene(TaskFamily::lift, 3);
  const auto cams = default_cameras();
  const auto views = render_views(ts.scene.world, cams);
  const auto f = policy_features(views[0], cams[0], ts.scene.world, ts.task.target_ids);
  REQUIRE(static_cast<int>(f.size()) == kPolicyFeatureDim);
  for (double e : f) CHECK(std::abs(e) <= 1.0);
  CHECK(f[4] == 1.0);  // target visible in the scene view
  const Vec3 obj = ts.scene.world.at(ts.task.target_ids[0]).pose.t;
  CHECK(f[5] * 0.45 == doctest::Approx(obj.x()).epsilon(0.05).scale(1.0));
  CHECK(std::abs(f[5] * 0.45 - obj.x()) < 0.03);
  CHECK(std::abs(f[6] * 0.45 - obj.y()) < 0.03);
}

TEST_CASE("mlp: hand-computed forward, zero weights, batch agreement") {
  Rng rng = make_rng(1, "mlp");
  Mlp net({2, 2, 1}, rng);
  net.W(0) << 0.5, -0.3, 0.2, 0.8;
  net.b(0) << 0.1, -0.2;
  net.W(1) << 1.5, -0.7;
  net.b(1) << 0.05;
  const double x[2] = {0.3, -0.6};
  const double h0 = std::tanh(0.5 * 0.3 - 0.3 * -0.6 + 0.1);
  const double h1 = std::tanh(0.2 * 0.3 + 0.8 * -0.6 - 0.2);
  const double want = 1.5 * h0 - 0.7 * h1 + 0.05;
  CHECK(std::abs(net.forward_one(x, 2)[0] - want) < 1e-12);
  Mat X(2, 1);
  X << 0.3, -0.6;
  CHECK(std::abs(net.forward(X)(0, 0) - want) < 1e-12);

  const auto zl = reward_layout({}, 1, 1);
  Mlp zero({zl.dim(), 4, 1}, rng);
  zero.unflatten(std::vector<double>(zero.param_count(), 0.0));
  RewardModel m{zero, zl};
  CHECK(m.forward(FeatureVector(static_cast<std::size_t>(m.layout.dim()), 0.7)) == 0.5);

  Mlp big({7, 9, 5, 3}, rng);
  const Mat Xb = gradcheck::uniform_matrix(7, 11, -1.0, 1.0, rng);
  const Mat Yb = big.forward(Xb);
  for (int c = 0; c < 11; ++c) {
    const VecX col = Xb.col(c);
    CHECK((big.forward_one(col.data(), 7) - Yb.col(c)).cwiseAbs().maxCoeff() < 1e-12);
  }
  const double nan_in[2] = {std::nan(""), 0.0};
  CHECK_THROWS_AS(net.forward_one(nan_in, 2), std::invalid_argument);
  CHECK_THROWS_AS(net.forward_one(x, 3), std::invalid_argument);
}

TEST_CASE("mlp: checkpoint round trip, corruption, polyak") {
  Rng rng = make_rng(2, "mlp");
  Mlp a({5, 8, 3}, rng), b({3, 4, 2}, rng);
  gradcheck::randomize(a, rng, 1.0);
  const auto dir = std::filesystem::temp_directory_path() / "prism_mlp_test";
  std::filesystem::create_directories(dir);
  save_networks(dir / "n.bin", {&a, &b});
  const auto back = load_networks(dir / "n.bin");
  REQUIRE(back.size() == 2);
  CHECK(back[0].flatten() == a.flatten());
  CHECK(back[1].flatten() == b.flatten());
  CHECK(back[1].sizes() == b.sizes());
  {
    std::ofstream o(dir / "bad.bin", std::ios::binary);
    o << "NOTANET";
  }
  CHECK_THROWS(load_networks(dir / "bad.bin"));
  CHECK_THROWS(load_networks(dir / "missing.bin"));

  Mlp t = b;
  gradcheck::randomize(t, rng, 1.0);
  t.polyak_from(a.sizes() == t.sizes() ? a : b, 1.0);
  CHECK(t.flatten() == b.flatten());
  Mlp h = b;
  gradcheck::randomize(h, rng, 1.0);
  const auto before = h.flatten();
  h.polyak_from(b, 0.25);
  const auto after = h.flatten(), src = b.flatten();
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i] == doctest::Approx(0.75 * before[i] + 0.25 * src[i]));
  CHECK_THROWS(h.polyak_from(a, 0.5));
}

TEST_CASE("mlp: decoupled weight decay with a zero gradient") {
  Rng rng = make_rng(4, "decay");
  Mlp net({3, 4, 1}, rng);
  gradcheck::randomize(net, rng, 1.0);
  const Mlp before = net;
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.5;
  Adam opt(net, cfg);
  Mlp::Grads g;
  g.zero_like(net);
  opt.step(net, g);
  for (int l = 0; l < net.layers(); ++l) {
    CHECK((net.W(l) - 0.995 * before.W(l)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(net.b(l) == before.b(l));
  }
}

TEST_CASE("gradients match central differences") {
  for (std::uint64_t s = 0; s < 12; ++s) {
    const auto r = gradcheck::check_config(s);
    INFO("config " << s << ": " << r.worst);
    CHECK(r.checked > 50);
    CHECK(r.max_rel <= 1e-4);
  }
}

TEST_CASE("reward: constant labels, separable data, determinism") {
  const auto layout = tiny_layout();
  Rng rng = make_rng(3, "reward");
  RewardDataset ones{layout, {}};
  for (int i = 0; i < 64; ++i) ones.add(random_tiny(rng, layout), 1, Stage::post, true);
  RewardTrainConfig cfg;
  cfg.hidden = {16};
  cfg.steps = 300;
  const auto r1 = train_reward(ones, cfg);
  CHECK(r1.degenerate);
  double mean = 0.0;
  for (const auto& rec : ones.records) mean += r1.model.forward(rec.x.unpack()) / 64.0;
  CHECK(mean >= 0.95);

  RewardDataset train{layout, {}}, test{layout, {}};
  for (int i = 0; i < 600;) {
    const auto x = random_tiny(rng, layout);
    if (std::abs(x[0] + x[3] - 1.0) < 0.1) continue;  // keep a margin
    const int y = x[0] + x[3] > 1.0 ? 1 : 0;
    (i++ < 400 ? train : test).add(x, y, Stage::post, y == 1);
  }
  cfg.steps = 4000;
  cfg.lr = 1e-3;  // low-dimensional inputs, no saturation concern
  const auto r2 = train_reward(train, cfg);
  CHECK_FALSE(r2.degenerate);
  CHECK(reward_accuracy(r2.model, test) >= 0.95);
  CHECK(r2.loss_trace.back() < r2.loss_trace.front());
  const auto r3 = train_reward(train, cfg);
  CHECK(r3.model.net.flatten() == r2.model.net.flatten());

  RewardDataset empty{layout, {}};
  CHECK_THROWS_AS(train_reward(empty, cfg), std::invalid_argument);
  CHECK_THROWS_AS(train.add(random_tiny(rng, layout), 2, Stage::post, false), std::invalid_argument);

  const auto dir = std::filesystem::temp_directory_path() / "prism_reward_test";
  save_reward_model(dir / "r.bin", r2.model, "reward");
  const auto loaded = load_reward_model(dir / "r.bin");
  for (const auto& rec : test.records) CHECK(loaded.forward(rec.x.unpack()) == r2.model.forward(rec.x.unpack()));
}

TEST_CASE("relabel: idempotent, audited, serial equals parallel, single targeted flip") {
  const auto layout = tiny_layout();
  Rng rng = make_rng(4, "relabel");
  ReplayBuffer buf(500);
  for (int i = 0; i < 300; ++i) {
    Transition t;
    t.is_demo = i < 20;
    t.reward_features = pack(random_tiny(rng, layout), layout);
    buf.add(std::move(t));
  }
  RewardModel m;
  m.layout = layout;
  m.net = Mlp({layout.dim(), 12, 1}, rng);
  gradcheck::randomize(m.net, rng, 0.5);

  CHECK(audit_relabel(buf, m) > 0);
  relabel(buf, m);
  CHECK(audit_relabel(buf, m) == 0);
  std::vector<double> first;
  for (std::size_t i = 0; i < buf.size(); ++i) first.push_back(buf.at(i).reward);
  relabel(buf, m);
  for (std::size_t i = 0; i < buf.size(); ++i) CHECK(buf.at(i).reward == first[i]);
  ReplayBuffer copy = buf;
  relabel_serial(copy, m);
  for (std::size_t i = 0; i < buf.size(); ++i) CHECK(copy.at(i).reward == buf.at(i).reward);

  // Shift the output bias so exactly the sample nearest the boundary crosses 0.5.
  std::vector<double> z(buf.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const auto x = buf.at(i).reward_features.unpack();
    z[i] = m.net.forward_one(x.data(), x.size())[0];
    if (std::abs(z[i]) < std::abs(z[j])) j = i;
  }
  RewardModel m2 = m;
  const double sign = z[j] >= 0 ? 1.0 : -1.0;
  m2.net.b(m2.net.layers() - 1)[0] -= z[j] + sign * 1e-9;
  relabel(buf, m2);
  int flips = 0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    if ((first[i] >= 0.5) != (buf.at(i).reward >= 0.5)) {
      ++flips;
      CHECK(i == j);
    }
  }
  CHECK(flips == 1);
  CHECK(audit_relabel(buf, m2) == 0);
}

TEST_CASE("replay: demos survive eviction") {
  ReplayBuffer buf(50);
  for (int i = 0; i < 10; ++i) buf.add(tagged(-1.0 - i, true));
  for (int i = 0; i < 200; ++i) buf.add(tagged(i, false));
  CHECK(buf.size() == 50);
  CHECK(buf.demo_count() == 10);
  for (int i = 0; i < 10; ++i) CHECK(buf.at(static_cast<std::size_t>(i)).reward == -1.0 - i);
  std::set<double> agent;
  for (std::size_t i = 10; i < buf.size(); ++i) agent.insert(buf.at(i).reward);
  CHECK(agent.size() == 40);
  CHECK(*agent.begin() == 160.0);
  CHECK(*agent.rbegin() == 199.0);

  // A demo arriving into a full buffer evicts the oldest agent transition.
  buf.add(tagged(-50.0, true));
  CHECK(buf.size() == 50);
  CHECK(buf.demo_count() == 11);
  agent.clear();
  for (std::size_t i = 11; i < buf.size(); ++i) agent.insert(buf.at(i).reward);
  CHECK(*agent.begin() == 161.0);
  buf.add(tagged(500.0, false));
  agent.clear();
  for (std::size_t i = 11; i < buf.size(); ++i) agent.insert(buf.at(i).reward);
  CHECK(*agent.begin() == 162.0);
  CHECK(*agent.rbegin() == 500.0);

  ReplayBuffer tiny(2);
  tiny.add(tagged(0, true));
  tiny.add(tagged(0, true));
  CHECK_THROWS_AS(tiny.add(tagged(0, true)), std::length_error);
}

TEST_CASE("feasibility predictor and gate") {
  const auto cams = default_cameras();
  const auto base = make_task_scene(TaskFamily::lift, 11);
  const int target = base.task.target_ids[0];
  const auto layout = reward_layout(base.task.target_ids);
  Action close;
  close.gripper_command = GripperCommand::close;
  Rng rng = make_rng(5, "feasibility");

  auto sample = [&](bool aligned) {
    auto ts = make_task_scene(TaskFamily::lift, rng(), 0.08);
    WorldState w = ts.scene.world;
    const Vec3 c = w.at(target).pose.t;
    Vec3 off;
    if (aligned) {
      off = Vec3(uniform(rng, -0.004, 0.004), uniform(rng, -0.004, 0.004), uniform(rng, -0.004, 0.004));
    } else {
      do {
        off = Vec3(uniform(rng, -0.15, 0.15), uniform(rng, -0.15, 0.15), uniform(rng, 0.0, 0.15));
      } while (off.norm() < 0.06);
    }
    w.gripper.pose.t = c + off;
    return w;
  };
  RewardDataset ds{layout, {}};
  std::vector<WorldState> held;
  for (int i = 0; i < 400; ++i) {
    const WorldState w = sample(i % 2 == 0);
    const bool truth = ground_truth(w, base.task, Stage::pre);
    if (i < 300) {
      ds.add(encode(render_views(w, {cams[0], cams[1], cams[2], cams[3]}), layout, Aperture::open, close),
             truth ? 1 : 0, Stage::pre, truth);
    } else {
      held.push_back(w);
    }
  }
  RewardTrainConfig cfg;
  cfg.steps = 800;
  const auto feas = derive_feasibility(ds, cfg);
  CHECK(feas.model.layout.views == 1);
  int ok = 0;
  for (const auto& w : held) {
    const auto d = gate(feas.model, render_views(w, {cams[0]})[0], Aperture::open, close);
    ok += d.allowed == ground_truth(w, base.task, Stage::pre) ? 1 : 0;
  }
  CHECK(ok >= 90);

  // A scripted successful rollout is never altered by the gate.
  const auto demo = generate_scripted_demo(base, 7);
  const auto sim = map_to_sim(demo, base.scene.world);
  WorldState w = base.scene.world;
  for (const auto& f : sim.frames) {
    const auto d = gate(feas.model, render_views(f.state, {cams[0]})[0], f.state.gripper.aperture, f.action);
    CHECK(d.allowed);
    w = step(w, d.action);
  }
  CHECK(task_success(w, base.task));

  // Ties allow; open and hold are never gated.
  RewardModel flat = feas.model;
  flat.net.unflatten(std::vector<double>(flat.net.param_count(), 0.0));
  const auto view = render_views(held[1], {cams[0]})[0];
  CHECK(gate(flat, view, Aperture::open, close).allowed);
  GateConfig strict;
  strict.threshold = 0.6;
  const auto denied = gate(flat, view, Aperture::open, close, strict);
  CHECK_FALSE(denied.allowed);
  CHECK(denied.action.gripper_command == GripperCommand::hold);
  Action open;
  open.gripper_command = GripperCommand::open;
  CHECK(gate(flat, view, Aperture::closed, open, strict).allowed);
}

TEST_CASE("sac: critic targets") {
  SacConfig cfg;
  cfg.hidden = {16, 16};
  cfg.batch = 8;
  SacAgent agent(6, cfg, 9);
  Rng rng = make_rng(6, "sac");
  SacBatch b;
  b.s = gradcheck::uniform_matrix(6, 8, -1.0, 1.0, rng);
  b.s2 = gradcheck::uniform_matrix(6, 8, -1.0, 1.0, rng);
  b.a = gradcheck::uniform_matrix(4, 8, -0.9, 0.9, rng);
  b.grip = {0, 1, 2, 0, 1, 2, 0, 1};
  b.r = VecX::Zero(8);
  for (int i = 0; i < 8; ++i) b.r[i] = uniform01(rng);
  b.done.assign(8, 1);

  SacConfig g0 = cfg;
  g0.gamma = 0.0;
  const VecX y = critic_targets(agent, b, g0, rng);
  for (int i = 0; i < 8; ++i) CHECK(y[i] == b.r[i]);
  b.done.assign(8, 0);
  const VecX y2 = critic_targets(agent, b, g0, rng);
  for (int i = 0; i < 8; ++i) CHECK(y2[i] == b.r[i]);

  b.done = {1, 0, 1, 0, 1, 0, 1, 0};
  double bound = 0.0;
  const VecX y3 = critic_targets(agent, b, cfg, rng, &bound);
  CHECK(y3[0] == doctest::Approx(b.r[0] / (1.0 - cfg.gamma)));
  CHECK(y3.cwiseAbs().maxCoeff() <= bound);

  // Updates stay finite and move the temperature.
  const double a0 = agent.alpha();
  for (int i = 0; i < 20; ++i) sac_update(agent, b, cfg, rng);
  CHECK(agent.alpha() != a0);
  CHECK(agent.policy.net.finite());
  CHECK(agent.critics.t1.finite());
  CHECK(agent.lambda_bc == doctest::Approx(std::pow(cfg.bc_decay, 20)));
}

TEST_CASE("sac: behavior cloning overfits a frozen batch monotonically") {
  Rng rng = make_rng(7, "bc");
  Policy pi(6, {32, 32}, rng);
  Adam opt(pi.net, {3e-4});
  const Mat s = gradcheck::uniform_matrix(6, 16, -1.0, 1.0, rng);
  const Mat a = gradcheck::uniform_matrix(4, 16, -0.8, 0.8, rng);
  std::vector<int> grip(16);
  for (auto& k : grip) k = static_cast<int>(rng() % 3);
  double prev = bc_update(pi, opt, s, a, grip);
  const double start = prev;
  int increases = 0;
  for (int i = 0; i < 500; ++i) {
    const double l = bc_update(pi, opt, s, a, grip);
    increases += l > prev ? 1 : 0;
    prev = l;
  }
  CHECK(increases == 0);
  CHECK(prev < 0.5 * start);
}

TEST_CASE("sac: acting, clamps and the squashed density") {
  Rng rng = make_rng(8, "act");
  Policy pi(5, {16}, rng);
  gradcheck::randomize(pi.net, rng, 1.5);
  const std::vector<double> f = {0.3, -0.2, 0.9, -1.0, 0.1};
  const auto d1 = pi.act(f, ActMode::deterministic, rng);
  const auto d2 = pi.act(f, ActMode::deterministic, rng);
  CHECK(d1.a == d2.a);
  CHECK(d1.grip == d2.grip);

  WorldConfig wcfg;
  for (int i = 0; i < 100000; ++i) {
    const auto pa = pi.act(f, ActMode::stochastic, rng, wcfg);
    for (int k = 0; k < 3; ++k) REQUIRE(std::abs(pa.action.delta_translation[k]) <= wcfg.max_translation);
    REQUIRE(std::abs(pa.action.delta_yaw) <= wcfg.max_yaw);
    REQUIRE(std::isfinite(pa.log_prob));
  }

  // Integrate the density of the first coordinate over (-1, 1) with the others fixed.
  Policy mild(5, {16}, rng);
  const VecX out = mild.net.forward_one(f.data(), f.size());
  std::array<double, 4> a = {0.0, 0.2, -0.3, 0.4};
  const double ref = mild.continuous_log_prob(f, a);
  double integral = 0.0;
  const int n = 200000;
  const double lo = -12.0, hi = 12.0, h = (hi - lo) / n;
  for (int i = 0; i <= n; ++i) {
    const double u = lo + h * i;
    a[0] = std::tanh(u);
    if (!(std::abs(a[0]) < 1.0)) continue;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    integral += w * h * std::exp(mild.continuous_log_prob(f, a) - ref) * (1.0 - a[0] * a[0]);
  }
  // integral = exp(-l0(0)) where l0 is the first coordinate's log density at a0 = 0.
  const double ls = mild.log_std(out[4]);
  const double l0 = -0.5 * (out[0] / std::exp(ls)) * (out[0] / std::exp(ls)) - ls - 0.5 * std::log(2.0 * M_PI);
  CHECK(-std::log(integral) == doctest::Approx(l0).epsilon(1e-6));
  CHECK_THROWS_AS(mild.continuous_log_prob(f, {1.0, 0.0, 0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("sac: agent checkpoint round trip") {
  SacConfig cfg;
  cfg.hidden = {8};
  SacAgent agent(5, cfg, 3);
  const auto dir = std::filesystem::temp_directory_path() / "prism_sac_test";
  std::filesystem::create_directories(dir);
  save_agent(dir / "agent.bin", agent, {{"step", 12}});
  const Policy p = load_policy(dir / "agent.bin");
  Rng r1 = make_rng(1, "x"), r2 = make_rng(1, "x");
  const std::vector<double> f = {0.1, 0.2, 0.3, 0.4, 0.5};
  CHECK(p.act(f, ActMode::stochastic, r1).a == agent.policy.act(f, ActMode::stochastic, r2).a);
  std::filesystem::remove(dir / "agent.bin.json");
  CHECK_THROWS_AS(load_policy(dir / "agent.bin"), ConfigError);
}

namespace {

// Two-sided one-sample Kolmogorov-Smirnov statistic.
double ks_stat(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

}  // namespace

TEST_CASE("training: randomized initial states") {
  const auto ts = make_task_scene(TaskFamily::lift, 100, 0.0);
  Rng rng = make_rng(5, "randomize_test");

  SUBCASE("zero scales leave the scene unchanged") {
    const WorldState w = randomize_init(ts.scene.world, {0.0, 0.0, 20}, rng);
    REQUIRE(w.objects.size() == ts.scene.world.objects.size());
    for (std::size_t i = 0; i < w.objects.size(); ++i) {
      CHECK((w.objects[i].pose.t - ts.scene.world.objects[i].pose.t).norm() == 0.0);
    }
    CHECK((w.gripper.pose.t - ts.scene.world.gripper.pose.t).norm() == 0.0);
  }

  SUBCASE("marginals match the configured distributions") {
    // One object so no draw is rejected and the marginals are exact.
    WorldState one = ts.scene.world;
    one.objects.resize(1);
    const Vec3 o0 = one.objects[0].pose.t, g0 = one.gripper.pose.t;
    std::vector<double> dx, gz;
    for (int i = 0; i < 10000; ++i) {
      const WorldState w = randomize_init(one, {}, rng);
      dx.push_back(w.objects[0].pose.t.x() - o0.x());
      gz.push_back(w.gripper.pose.t.z() - g0.z());
    }
    const double crit = 1.95 / std::sqrt(10000.0);  // alpha = 0.001
    CHECK(ks_stat(dx, [](double v) { return std::clamp((v + 0.10) / 0.20, 0.0, 1.0); }) < crit);
    CHECK(ks_stat(gz, [](double v) { return 0.5 * std::erfc(-v / (0.02 * std::sqrt(2.0))); }) < crit);
  }

  SUBCASE("every sample is collision-free and keeps its supports") {
    for (int i = 0; i < 200; ++i) {
      const WorldState w = randomize_init(ts.scene.world, {}, rng);
      CHECK(check_collision(w).empty());
      for (const auto& o : w.objects) CHECK(support_parent(w, o.id) == support_parent(ts.scene.world, o.id));
    }
  }
}
