#include "prism/sac.hpp"

#include "prism/scene_io.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace prism {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// log(1 - tanh(u)^2), stable for large |u|
double log1m_tanh2(double u) { return 2.0 * (std::log(2.0) - u - softplus(-2.0 * u)); }

std::array<double, kGripperChoices> softmax(const double* z) {
  const double m = std::max({z[0], z[1], z[2]});
  std::array<double, kGripperChoices> p{};
  double s = 0.0;
  for (int k = 0; k < kGripperChoices; ++k) s += (p[static_cast<std::size_t>(k)] = std::exp(z[k] - m));
  for (auto& v : p) v /= s;
  return p;
}

Mat stack_rows(const Mat& top, const Mat& bottom) {
  Mat X(top.rows() + bottom.rows(), top.cols());
  X << top, bottom;
  return X;
}

// Per-sample quantities of the squashed Gaussian and categorical heads.
struct HeadSample {
  Mat mean, ls, sigma, u, a;  // 4 x B
  Mat logits;                 // 3 x B
  Mat p, logp;                // 3 x B
  VecX logpc;                 // B
};

HeadSample heads(const Policy& pi, const Mat& out, const Mat& eps) {
  const Eigen::Index B = out.cols();
  HeadSample h;
  h.mean = out.topRows(kContinuousDims);
  h.ls.resize(kContinuousDims, B);
  h.logits = out.bottomRows(kGripperChoices);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int i = 0; i < kContinuousDims; ++i) h.ls(i, b) = pi.log_std(out(kContinuousDims + i, b));
  }
  h.sigma = h.ls.array().exp().matrix();
  h.u = h.mean + (h.sigma.array() * eps.array()).matrix();
  h.a = h.u.array().tanh().matrix();
  h.logpc.resize(B);
  h.p.resize(kGripperChoices, B);
  h.logp.resize(kGripperChoices, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    double lp = 0.0;
    for (int i = 0; i < kContinuousDims; ++i) {
      lp += -0.5 * eps(i, b) * eps(i, b) - h.ls(i, b) - kHalfLog2Pi - log1m_tanh2(h.u(i, b));
    }
    h.logpc[b] = lp;
    const auto p = softmax(h.logits.col(b).data());
    for (int k = 0; k < kGripperChoices; ++k) {
      h.p(k, b) = p[static_cast<std::size_t>(k)];
      h.logp(k, b) = std::log(std::max(p[static_cast<std::size_t>(k)], 1e-300));
    }
  }
  return h;
}

Mat normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat e(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) e(r, c) = standard_normal(rng);
  }
  return e;
}

}  // namespace

void SacConfig::check() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("sac.gamma must lie in (0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("sac.tau must lie in (0, 1]");
  if (!(lambda_bc >= 0.0)) throw ConfigError("sac.lambda_bc must be >= 0");
  if (batch < 1 || demo_batch < 0) throw ConfigError("sac batch sizes must be positive");
  if (!(initial_alpha > 0.0)) throw ConfigError("sac.initial_alpha must be > 0");
  if (!(log_std_min < log_std_max)) throw ConfigError("sac log-std range is empty");
}

Policy::Policy(int feature_dim, const std::vector<int>& hidden, Rng& rng, double ls_min, double ls_max)
    : log_std_min(ls_min), log_std_max(ls_max) {
  std::vector<int> sizes = {feature_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * kContinuousDims + kGripperChoices);
  net = Mlp(sizes, rng);
}

double Policy::log_std(double raw) const {
  return log_std_min + 0.5 * (log_std_max - log_std_min) * (std::tanh(raw) + 1.0);
}

PolicyAction Policy::act(const std::vector<double>& features, ActMode mode, Rng& rng, const WorldConfig& wcfg) const {
  const VecX out = net.forward_one(features.data(), features.size());
  PolicyAction pa;
  double lp = 0.0;
  for (int i = 0; i < kContinuousDims; ++i) {
    const double ls = log_std(out[kContinuousDims + i]);
    const double e = mode == ActMode::stochastic ? standard_normal(rng) : 0.0;
    const double u = out[i] + std::exp(ls) * e;
    pa.a[static_cast<std::size_t>(i)] = std::tanh(u);
    lp += -0.5 * e * e - ls - kHalfLog2Pi - log1m_tanh2(u);
  }
  const auto p = softmax(out.data() + 2 * kContinuousDims);
  if (mode == ActMode::deterministic) {
    pa.grip = 0;
    for (int k = 1; k < kGripperChoices; ++k) {
      if (p[static_cast<std::size_t>(k)] > p[static_cast<std::size_t>(pa.grip)]) pa.grip = k;
    }
  } else {
    const double r = uniform01(rng);
    double c = 0.0;
    pa.grip = kGripperChoices - 1;
    for (int k = 0; k < kGripperChoices; ++k) {
      c += p[static_cast<std::size_t>(k)];
      if (r < c) {
        pa.grip = k;
        break;
      }
    }
  }
  pa.log_prob = lp + std::log(std::max(p[static_cast<std::size_t>(pa.grip)], 1e-300));
  pa.action.delta_translation = Vec3(pa.a[0], pa.a[1], pa.a[2]) * wcfg.max_translation;
  pa.action.delta_yaw = pa.a[3] * wcfg.max_yaw;
  pa.action.gripper_command = static_cast<GripperCommand>(pa.grip);
  return pa;
}

double Policy::continuous_log_prob(const std::vector<double>& features,
                                   const std::array<double, kContinuousDims>& a) const {
  const VecX out = net.forward_one(features.data(), features.size());
  double lp = 0.0;
  for (int i = 0; i < kContinuousDims; ++i) {
    const double ai = a[static_cast<std::size_t>(i)];
    if (!(ai > -1.0 && ai < 1.0)) throw std::invalid_argument("normalized action must lie in (-1, 1)");
    const double ls = log_std(out[kContinuousDims + i]);
    const double e = (std::atanh(ai) - out[i]) / std::exp(ls);
    lp += -0.5 * e * e - ls - kHalfLog2Pi - std::log1p(-ai * ai);
  }
  return lp;
}

Critics::Critics(int feature_dim, const std::vector<int>& hidden, Rng& rng) {
  std::vector<int> sizes = {feature_dim + kContinuousDims};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(kGripperChoices);
  q1 = Mlp(sizes, rng);
  q2 = Mlp(sizes, rng);
  t1 = q1;
  t2 = q2;
}

SacAgent::SacAgent(int feature_dim, const SacConfig& cfg, std::uint64_t seed) {
  cfg.check();
  Rng rng = make_rng(seed, "sac_init");
  policy = Policy(feature_dim, cfg.hidden, rng, cfg.log_std_min, cfg.log_std_max);
  critics = Critics(feature_dim, cfg.hidden, rng);
  log_alpha = std::log(cfg.initial_alpha);
  lambda_bc = cfg.lambda_bc;
  actor_opt = Adam(policy.net, {cfg.actor_lr});
  q1_opt = Adam(critics.q1, {cfg.critic_lr});
  q2_opt = Adam(critics.q2, {cfg.critic_lr});
  alpha_opt.cfg.lr = cfg.alpha_lr;
}

double SacAgent::alpha() const { return std::exp(log_alpha); }

SacBatch sample_batch(const ReplayBuffer& buf, const SacConfig& cfg, Rng& rng) {
  if (buf.size() == 0) throw std::invalid_argument("cannot sample from an empty replay buffer");
  const int F = static_cast<int>(buf.at(0).s.size());
  const int B = cfg.batch;
  const int D = buf.demo_count() ? cfg.demo_batch : 0;
  // Columns [0, B) are uniform over the buffer, [B, B + D) are demonstrations; the critic and the SAC actor
  // term see all of them, the BC term only the demonstrations.
  SacBatch b;
  b.s.resize(F, B + D);
  b.s2.resize(F, B + D);
  b.a.resize(kContinuousDims, B + D);
  b.grip.resize(static_cast<std::size_t>(B + D));
  b.r.resize(B + D);
  b.done.resize(static_cast<std::size_t>(B + D));
  for (int c = 0; c < B + D; ++c) {
    const std::size_t i = c < B ? static_cast<std::size_t>(rng() % buf.size())
                                : static_cast<std::size_t>(rng() % buf.demo_count());
    const auto& t = buf.at(i);
    b.s.col(c) = Eigen::Map<const VecX>(t.s.data(), F);
    b.s2.col(c) = Eigen::Map<const VecX>(t.s2.data(), F);
    for (int k = 0; k < kContinuousDims; ++k) b.a(k, c) = t.a[static_cast<std::size_t>(k)];
    b.grip[static_cast<std::size_t>(c)] = t.grip;
    b.r[c] = t.reward;
    b.done[static_cast<std::size_t>(c)] = t.done ? 1 : 0;
  }
  b.demo_s = b.s.rightCols(D);
  b.demo_a = b.a.rightCols(D);
  b.demo_grip.assign(b.grip.end() - D, b.grip.end());
  return b;
}

double critic_loss_and_grads(const Mlp& q, const Mat& s, const Mat& a, const std::vector<int>& grip, const VecX& y,
                             Mlp::Grads& g, Mat* d_input) {
  Mlp::Cache cache;
  const Mat Q = q.forward(stack_rows(s, a), &cache);
  const Eigen::Index B = s.cols();
  Mat d = Mat::Zero(Q.rows(), B);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const int k = grip[static_cast<std::size_t>(b)];
    const double diff = Q(k, b) - y[b];
    loss += 0.5 * diff * diff / static_cast<double>(B);
    d(k, b) = diff / static_cast<double>(B);
  }
  Mat dx = q.backward(cache, d, g);
  if (d_input) *d_input = std::move(dx);
  return loss;
}

double actor_loss_and_grads(const Policy& pi, const Mlp& q1, const Mlp& q2, double alpha, const Mat& s,
                            const Mat& eps, Mlp::Grads& g, double* mean_log_prob, double* mean_abs_q) {
  const Eigen::Index B = s.cols();
  const double invB = 1.0 / static_cast<double>(B);
  Mlp::Cache cache;
  const Mat out = pi.net.forward(s, &cache);
  const HeadSample h = heads(pi, out, eps);

  Mlp::Cache c1, c2;
  const Mat X = stack_rows(s, h.a);
  const Mat Q1 = q1.forward(X, &c1);
  const Mat Q2 = q2.forward(X, &c2);

  Mat d1 = Mat::Zero(kGripperChoices, B), d2 = Mat::Zero(kGripperChoices, B);
  Mat dout = Mat::Zero(out.rows(), B);
  double loss = 0.0, mlp = 0.0, maq = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    double f = alpha * h.logpc[b];
    double avg = 0.0;
    std::array<double, kGripperChoices> dfdp{};
    for (int k = 0; k < kGripperChoices; ++k) {
      const bool first = Q1(k, b) <= Q2(k, b);
      const double m = first ? Q1(k, b) : Q2(k, b);
      f += h.p(k, b) * (alpha * h.logp(k, b) - m);
      maq += h.p(k, b) * std::abs(m) * invB;
      dfdp[static_cast<std::size_t>(k)] = alpha * h.logp(k, b) + alpha - m;
      avg += h.p(k, b) * dfdp[static_cast<std::size_t>(k)];
      (first ? d1 : d2)(k, b) = -h.p(k, b) * invB;
    }
    for (int k = 0; k < kGripperChoices; ++k) {
      dout(2 * kContinuousDims + k, b) = h.p(k, b) * (dfdp[static_cast<std::size_t>(k)] - avg) * invB;
    }
    loss += f * invB;
    double ent = 0.0;
    for (int k = 0; k < kGripperChoices; ++k) ent += h.p(k, b) * h.logp(k, b);
    mlp += (h.logpc[b] + ent) * invB;
  }

  // Gradient of min(Q) with respect to the sampled action, through both critics.
  Mlp::Grads sink1, sink2;
  const Mat dx1 = q1.backward(c1, d1, sink1);
  const Mat dx2 = q2.backward(c2, d2, sink2);
  const Mat dA = dx1.bottomRows(kContinuousDims) + dx2.bottomRows(kContinuousDims);

  const double half_range = 0.5 * (pi.log_std_max - pi.log_std_min);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int i = 0; i < kContinuousDims; ++i) {
      const double a = h.a(i, b), se = h.sigma(i, b) * eps(i, b);
      const double du = dA(i, b) * (1.0 - a * a);
      const double dmean = alpha * invB * 2.0 * a + du;
      const double dls = alpha * invB * (-1.0 + 2.0 * a * se) + du * se;
      const double t = std::tanh(out(kContinuousDims + i, b));
      dout(i, b) = dmean;
      dout(kContinuousDims + i, b) = dls * half_range * (1.0 - t * t);
    }
  }
  pi.net.backward(cache, dout, g);
  if (mean_log_prob) *mean_log_prob = mlp;
  if (mean_abs_q) *mean_abs_q = maq;
  return loss;
}

double bc_loss_and_grads(const Policy& pi, const Mat& s, const Mat& a, const std::vector<int>& grip, double lambda,
                         Mlp::Grads& g) {
  const Eigen::Index B = s.cols();
  if (B == 0) return 0.0;
  Mlp::Cache cache;
  const Mat out = pi.net.forward(s, &cache);
  Mat dout = Mat::Zero(out.rows(), B);
  double mse = 0.0, ce = 0.0;
  const double nB = static_cast<double>(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int i = 0; i < kContinuousDims; ++i) {
      const double t = std::tanh(out(i, b));
      const double e = t - a(i, b);
      mse += e * e / (nB * kContinuousDims);
      dout(i, b) = lambda * 2.0 * e * (1.0 - t * t) / (nB * kContinuousDims);
    }
    const auto p = softmax(out.col(b).data() + 2 * kContinuousDims);
    const int k = grip[static_cast<std::size_t>(b)];
    ce += -std::log(std::max(p[static_cast<std::size_t>(k)], 1e-300)) / nB;
    for (int j = 0; j < kGripperChoices; ++j) {
      dout(2 * kContinuousDims + j, b) = lambda * (p[static_cast<std::size_t>(j)] - (j == k ? 1.0 : 0.0)) / nB;
    }
  }
  pi.net.backward(cache, dout, g);
  return lambda * (mse + ce);
}

double bc_update(Policy& policy, Adam& opt, const Mat& demo_s, const Mat& demo_a, const std::vector<int>& demo_grip) {
  Mlp::Grads g;
  g.zero_like(policy.net);
  const double loss = bc_loss_and_grads(policy, demo_s, demo_a, demo_grip, 1.0, g);
  if (!std::isfinite(loss)) throw std::runtime_error("behavior cloning loss is not finite");
  opt.step(policy.net, g);
  return loss;
}

VecX critic_targets(const SacAgent& agent, const SacBatch& batch, const SacConfig& cfg, Rng& rng, double* bound) {
  const Eigen::Index B = batch.s.cols();
  const double alpha = agent.alpha();
  const Mat out = agent.policy.net.forward(batch.s2);
  const HeadSample h = heads(agent.policy, out, normal_matrix(kContinuousDims, B, rng));
  const Mat X = stack_rows(batch.s2, h.a);
  const Mat T1 = agent.critics.t1.forward(X), T2 = agent.critics.t2.forward(X);
  VecX y(B);
  double max_abs_logp = 0.0;
  const double vmax = 1.0 / (1.0 - cfg.gamma);  // return range for rewards in (0, 1)
  for (Eigen::Index b = 0; b < B; ++b) {
    double v = 0.0;
    for (int k = 0; k < kGripperChoices; ++k) {
      const double lp = h.logpc[b] + h.logp(k, b);
      max_abs_logp = std::max(max_abs_logp, std::abs(lp));
      v += h.p(k, b) * (std::clamp(std::min(T1(k, b), T2(k, b)), 0.0, vmax) - alpha * lp);
    }
    const bool done = batch.done[static_cast<std::size_t>(b)];
    y[b] = done ? (cfg.absorbing_success ? batch.r[b] / (1.0 - cfg.gamma) : batch.r[b]) : batch.r[b] + cfg.gamma * v;
  }
  if (bound) *bound = 1.0 / (1.0 - cfg.gamma) + alpha * max_abs_logp;
  return y;
}

SacDiagnostics sac_update(SacAgent& agent, const SacBatch& batch, const SacConfig& cfg, Rng& rng, bool update_actor) {
  const Eigen::Index B = batch.s.cols();
  const double alpha = agent.alpha();
  SacDiagnostics diag;
  diag.alpha = alpha;

  double bound = 0.0;
  const VecX y = critic_targets(agent, batch, cfg, rng, &bound);
  diag.max_target = y.cwiseAbs().maxCoeff();
  if (!(diag.max_target <= bound * (1.0 + 1e-9))) {
    throw std::runtime_error("critic target " + std::to_string(diag.max_target) + " exceeds its bound " +
                             std::to_string(bound) + " at update " + std::to_string(agent.updates));
  }

  Mlp::Grads g1, g2;
  g1.zero_like(agent.critics.q1);
  g2.zero_like(agent.critics.q2);
  diag.critic_loss = critic_loss_and_grads(agent.critics.q1, batch.s, batch.a, batch.grip, y, g1) +
                     critic_loss_and_grads(agent.critics.q2, batch.s, batch.a, batch.grip, y, g2);
  agent.q1_opt.step(agent.critics.q1, g1);
  agent.q2_opt.step(agent.critics.q2, g2);
  if (!std::isfinite(diag.critic_loss)) {
    spdlog::error("non-finite critic loss at update {}: alpha {} max target {}", agent.updates, alpha, diag.max_target);
    throw std::runtime_error("non-finite loss in sac_update");
  }
  if (!update_actor) {
    agent.critics.t1.polyak_from(agent.critics.q1, cfg.tau);
    agent.critics.t2.polyak_from(agent.critics.q2, cfg.tau);
    ++agent.updates;
    return diag;
  }

  Mlp::Grads ga;
  ga.zero_like(agent.policy.net);
  double mean_logp = 0.0, mean_abs_q = 0.0;
  diag.actor_loss = actor_loss_and_grads(agent.policy, agent.critics.q1, agent.critics.q2, alpha, batch.s,
                                         normal_matrix(kContinuousDims, B, rng), ga, &mean_logp, &mean_abs_q);
  if (cfg.normalize_actor) {
    // Constant rescaling keeps the SAC term on the scale of the BC term as the values grow.
    const double k = 1.0 / std::max(mean_abs_q, 1.0);
    ga.scale(k);
    diag.actor_loss *= k;
  }
  if (batch.demo_s.cols() > 0 && agent.lambda_bc > 0.0) {
    diag.bc_loss = bc_loss_and_grads(agent.policy, batch.demo_s, batch.demo_a, batch.demo_grip, agent.lambda_bc, ga);
  }
  diag.entropy = -mean_logp;
  if (!std::isfinite(diag.critic_loss) || !std::isfinite(diag.actor_loss) || !std::isfinite(diag.bc_loss)) {
    spdlog::error("non-finite SAC loss at update {}: critic {} actor {} bc {} alpha {} max target {}", agent.updates,
                  diag.critic_loss, diag.actor_loss, diag.bc_loss, alpha, diag.max_target);
    throw std::runtime_error("non-finite loss in sac_update");
  }
  agent.actor_opt.step(agent.policy.net, ga);

  agent.log_alpha = agent.alpha_opt.step(agent.log_alpha, -(mean_logp + cfg.target_entropy));
  agent.critics.t1.polyak_from(agent.critics.q1, cfg.tau);
  agent.critics.t2.polyak_from(agent.critics.q2, cfg.tau);
  agent.lambda_bc *= cfg.bc_decay;
  ++agent.updates;
  return diag;
}

SacDiagnostics sac_update(SacAgent& agent, const ReplayBuffer& buf, const SacConfig& cfg, Rng& rng, bool update_actor) {
  if (buf.size() < static_cast<std::size_t>(cfg.batch)) throw std::invalid_argument("replay buffer smaller than batch");
  return sac_update(agent, sample_batch(buf, cfg, rng), cfg, rng, update_actor);
}

void save_agent(const std::filesystem::path& path, const SacAgent& agent, const json& extra) {
  const auto& c = agent.critics;
  save_networks(path, {&agent.policy.net, &c.q1, &c.q2, &c.t1, &c.t2});
  json man = {{"kind", "sac_agent"},
              {"format", "PRSMNET v1, row-major little-endian f64"},
              {"networks", {"actor", "q1", "q2", "q1_target", "q2_target"}},
              {"actor_arch", agent.policy.net.arch_string()},
              {"critic_arch", c.q1.arch_string()},
              {"log_std_range", {agent.policy.log_std_min, agent.policy.log_std_max}},
              {"log_alpha", agent.log_alpha},
              {"lambda_bc", agent.lambda_bc},
              {"updates", agent.updates},
              {"file", path.filename().string()},
              {"extra", extra}};
  std::ofstream o(path.string() + ".json");
  o << man.dump(2) << "\n";
}

Policy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) throw ConfigError("missing checkpoint manifest " + path.string() + ".json");
  json man;
  try {
    man = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest " + path.string() + ".json: " + e.what());
  }
  auto nets = load_networks(path);
  if (nets.empty() || nets[0].output_dim() != 2 * kContinuousDims + kGripperChoices) {
    throw ConfigError("checkpoint " + path.string() + " holds no policy network");
  }
  Policy p;
  p.net = std::move(nets[0]);
  const auto r = man.value("log_std_range", std::vector<double>{-5.0, 2.0});
  p.log_std_min = r.at(0);
  p.log_std_max = r.at(1);
  return p;
}

}  // namespace prism
