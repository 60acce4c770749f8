#include "prism/reward.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace prism {

void ReplayBuffer::add(Transition t) {
  if (t.is_demo) {
    if (demos_.size() + 1 > capacity_) throw std::length_error("demonstrations exceed the replay capacity");
    demos_.push_back(std::move(t));
    // Make room by dropping the oldest agent transition.
    if (size() > capacity_) {
      agent_.erase(agent_.begin() + static_cast<std::ptrdiff_t>(head_ % agent_.size()));
      if (!agent_.empty()) head_ %= agent_.size();
      else head_ = 0;
    }
    return;
  }
  const std::size_t room = capacity_ - demos_.size();
  if (room == 0) return;
  if (agent_.size() < room) {
    agent_.push_back(std::move(t));
  } else {
    agent_[head_] = std::move(t);
    head_ = (head_ + 1) % room;
  }
}

void RewardDataset::add(const FeatureVector& x, int label, Stage stage, bool truth, double weight) {
  if (label != 0 && label != 1) throw std::invalid_argument("reward labels must be 0 or 1");
  if (!(weight > 0.0)) throw std::invalid_argument("record weights must be positive");
  records.push_back({pack(x, layout), label, stage, weight, truth});
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double RewardModel::forward(const FeatureVector& x) const {
  if (static_cast<int>(x.size()) != layout.dim()) throw std::invalid_argument("reward features do not match the layout");
  return sigmoid(net.forward_one(x.data(), x.size())[0]);
}

double bce_loss_and_grads(const Mlp& net, const Mat& X, const std::vector<int>& labels,
                          const std::vector<double>& weights, Mlp::Grads& g) {
  Mlp::Cache cache;
  const Mat z = net.forward(X, &cache);
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  Mat d(1, X.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    const double zi = z(0, i);
    const double y = labels[static_cast<std::size_t>(i)];
    const double w = weights[static_cast<std::size_t>(i)] / wsum;
    // log(1 + e^z) - y z, stable
    const double sp = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
    loss += w * (sp - y * zi);
    d(0, i) = w * (sigmoid(zi) - y);
  }
  net.backward(cache, d, g);
  return loss;
}

namespace {

Mat batch_matrix(const RewardDataset& ds, const std::vector<std::size_t>& idx) {
  Mat X(ds.layout.dim(), static_cast<Eigen::Index>(idx.size()));
  FeatureVector tmp;
  for (std::size_t c = 0; c < idx.size(); ++c) {
    ds.records[idx[c]].x.unpack_into(tmp);
    X.col(static_cast<Eigen::Index>(c)) = Eigen::Map<const VecX>(tmp.data(), static_cast<Eigen::Index>(tmp.size()));
  }
  return X;
}

}  // namespace

RewardTrainResult train_reward(const RewardDataset& ds, const RewardTrainConfig& cfg, const RewardModel* warm_start) {
  if (ds.records.empty()) throw std::invalid_argument("reward dataset is empty");
  if (cfg.batch < 1 || cfg.steps < 0) throw std::invalid_argument("bad reward training config");
  RewardTrainResult res;
  res.model.layout = ds.layout;
  if (warm_start) {
    if (warm_start->layout.dim() != ds.layout.dim()) throw std::invalid_argument("warm start layout mismatch");
    res.model.net = warm_start->net;
  } else {
    Rng init = make_rng(cfg.seed, "reward_init");
    std::vector<int> sizes = {ds.layout.dim()};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(1);
    res.model.net = Mlp(sizes, init);
  }
  int pos = 0;
  for (const auto& r : ds.records) pos += r.label;
  if (pos == 0 || pos == static_cast<int>(ds.records.size())) {
    res.degenerate = true;
    spdlog::warn("reward dataset has a single class ({} records, label {}); training anyway", ds.records.size(),
                 pos ? 1 : 0);
  }
  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = cfg.weight_decay;
  Adam opt(res.model.net, ac);
  Rng rng = make_rng(cfg.seed, "reward_batch");
  const std::size_t n = ds.records.size();
  const std::size_t bsz = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), n);
  std::vector<std::size_t> idx(bsz);
  std::vector<int> labels(bsz);
  std::vector<double> weights(bsz);
  Mlp::Grads g;
  for (int step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < bsz; ++i) {
      idx[i] = static_cast<std::size_t>(rng() % n);
      labels[i] = ds.records[idx[i]].label;
      weights[i] = ds.records[idx[i]].weight;
    }
    g.zero_like(res.model.net);
    const double loss = bce_loss_and_grads(res.model.net, batch_matrix(ds, idx), labels, weights, g);
    if (!std::isfinite(loss)) throw std::runtime_error("reward training produced a non-finite loss");
    const double gn = g.norm();
    if (gn > cfg.clip_norm) g.scale(cfg.clip_norm / gn);
    opt.step(res.model.net, g);
    res.loss_trace.push_back(loss);
  }
  return res;
}

double reward_accuracy(const RewardModel& m, const RewardDataset& ds, bool vs_truth) {
  if (ds.records.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& r : ds.records) {
    const int pred = m.forward(r.x.unpack()) >= 0.5 ? 1 : 0;
    const int want = vs_truth ? (r.truth ? 1 : 0) : r.label;
    ok += pred == want ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(ds.records.size());
}

void relabel(ReplayBuffer& buf, const RewardModel& m) {
  const auto n = static_cast<long>(buf.size());
#pragma omp parallel
  {
    FeatureVector tmp;
#pragma omp for schedule(static)
    for (long i = 0; i < n; ++i) {
      auto& t = buf.at(static_cast<std::size_t>(i));
      t.reward_features.unpack_into(tmp);
      t.reward = m.forward(tmp);
    }
  }
}

void relabel_serial(ReplayBuffer& buf, const RewardModel& m) {
  FeatureVector tmp;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    auto& t = buf.at(i);
    t.reward_features.unpack_into(tmp);
    t.reward = m.forward(tmp);
  }
}

std::size_t audit_relabel(const ReplayBuffer& buf, const RewardModel& m) {
  std::size_t bad = 0;
  FeatureVector tmp;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const auto& t = buf.at(i);
    t.reward_features.unpack_into(tmp);
    if (t.reward != m.forward(tmp)) ++bad;
  }
  return bad;
}

RewardTrainResult derive_feasibility(const RewardDataset& ds, const RewardTrainConfig& cfg) {
  RewardDataset single;
  single.layout = single_view_layout(ds.layout);
  for (const auto& r : ds.records) {
    if (r.stage != Stage::pre) continue;
    single.add(select_view(r.x.unpack(), ds.layout, 0), r.label, r.stage, r.truth, r.weight);
  }
  if (single.records.empty()) throw std::invalid_argument("no pre-stage records to derive the feasibility predictor");
  return train_reward(single, cfg);
}

GateDecision gate(const RewardModel& feasibility, const IdDepthImage& scene_view, Aperture aperture,
                  const Action& action, const GateConfig& cfg, const WorldConfig& wcfg) {
  GateDecision d;
  d.action = action;
  const bool gated = std::find(cfg.irreversible.begin(), cfg.irreversible.end(), action.gripper_command) !=
                     cfg.irreversible.end();
  if (!gated) return d;
  d.probability = feasibility.forward(encode({scene_view}, feasibility.layout, aperture, action, wcfg));
  if (d.probability < cfg.threshold) {
    d.allowed = false;
    d.action.gripper_command = GripperCommand::hold;
  }
  return d;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& trace) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream o(path);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g\n", i, trace[i]);
    o << buf;
  }
}

json layout_to_json(const FeatureLayout& l) {
  return {{"views", l.views}, {"grid", l.grid}, {"mask_ids", l.mask_ids}, {"dim", l.dim()}};
}

FeatureLayout layout_from_json(const json& j) {
  FeatureLayout l;
  l.views = j.at("views").get<int>();
  l.grid = j.at("grid").get<int>();
  l.mask_ids = j.at("mask_ids").get<std::vector<int>>();
  if (l.views < 1 || l.grid < 1) throw ConfigError("bad feature layout");
  return l;
}

void save_reward_model(const std::filesystem::path& path, const RewardModel& m, const std::string& kind) {
  save_networks(path, {&m.net});
  json man = {{"kind", kind},
              {"format", "PRSMNET v1, row-major little-endian f64"},
              {"arch", m.net.arch_string()},
              {"output", "sigmoid"},
              {"layout", layout_to_json(m.layout)},
              {"file", path.filename().string()}};
  std::ofstream o(path.string() + ".json");
  o << man.dump(2) << "\n";
}

RewardModel load_reward_model(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) throw ConfigError("missing checkpoint manifest " + path.string() + ".json");
  json man;
  try {
    man = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest " + path.string() + ".json: " + e.what());
  }
  RewardModel m;
  m.layout = layout_from_json(man.at("layout"));
  auto nets = load_networks(path);
  if (nets.size() != 1 || nets[0].input_dim() != m.layout.dim() || nets[0].output_dim() != 1) {
    throw ConfigError("checkpoint " + path.string() + " does not match its manifest");
  }
  m.net = std::move(nets[0]);
  return m;
}

}  // namespace prism
