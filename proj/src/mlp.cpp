#include "prism/mlp.hpp"

#include "prism/scene_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace prism {

Mlp::Mlp(std::vector<int> sizes, Rng& rng) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("network needs at least input and output sizes");
  for (int s : sizes_) {
    if (s < 1) throw std::invalid_argument("layer sizes must be positive");
  }
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    const double lim = std::sqrt(6.0 / (in + out));
    Mat w(out, in);
    for (int c = 0; c < in; ++c) {
      for (int r = 0; r < out; ++r) w(r, c) = uniform(rng, -lim, lim);
    }
    W_.push_back(std::move(w));
    b_.push_back(VecX::Zero(out));
  }
}

void Mlp::Grads::zero_like(const Mlp& m) {
  W.resize(static_cast<std::size_t>(m.layers()));
  b.resize(static_cast<std::size_t>(m.layers()));
  for (int l = 0; l < m.layers(); ++l) {
    W[static_cast<std::size_t>(l)] = Mat::Zero(m.W(l).rows(), m.W(l).cols());
    b[static_cast<std::size_t>(l)] = VecX::Zero(m.b(l).size());
  }
}

double Mlp::Grads::norm() const {
  double s = 0.0;
  for (const auto& w : W) s += w.squaredNorm();
  for (const auto& v : b) s += v.squaredNorm();
  return std::sqrt(s);
}

void Mlp::Grads::scale(double s) {
  for (auto& w : W) w *= s;
  for (auto& v : b) v *= s;
}

Mat Mlp::forward(const Mat& X, Cache* cache) const {
  if (X.rows() != input_dim()) throw std::invalid_argument("network input has the wrong size");
  if (cache) {
    cache->act.resize(W_.size() + 1);
    cache->act[0] = X;
  }
  Mat a = X;
  for (std::size_t l = 0; l < W_.size(); ++l) {
    Mat z = W_[l] * a;
    z.colwise() += b_[l];
    if (l + 1 < W_.size()) z = z.array().tanh().matrix();
    a = std::move(z);
    if (cache) cache->act[l + 1] = a;
  }
  return a;
}

Mat Mlp::backward(const Cache& cache, const Mat& d_out, Grads& g) const {
  if (g.W.size() != W_.size()) g.zero_like(*this);
  Mat delta = d_out;
  for (std::size_t l = W_.size(); l-- > 0;) {
    if (l + 1 < W_.size()) delta = (delta.array() * (1.0 - cache.act[l + 1].array().square())).matrix();
    g.W[l].noalias() += delta * cache.act[l].transpose();
    g.b[l] += delta.rowwise().sum();
    delta = W_[l].transpose() * delta;
  }
  return delta;
}

VecX Mlp::forward_one(const double* x, std::size_t n) const {
  if (n != static_cast<std::size_t>(input_dim())) throw std::invalid_argument("network input has the wrong size");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i])) throw std::invalid_argument("non-finite network input");
  }
  VecX in = Eigen::Map<const VecX>(x, static_cast<Eigen::Index>(n));
  for (std::size_t l = 0; l < W_.size(); ++l) {
    const Mat& w = W_[l];
    VecX z = b_[l];
    const Eigen::Index rows = w.rows();
    double* zp = z.data();
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      const double xc = in[c];
      if (xc == 0.0) continue;
      const double* col = w.data() + c * rows;
      for (Eigen::Index r = 0; r < rows; ++r) zp[r] += xc * col[r];
    }
    if (l + 1 < W_.size()) {
      for (Eigen::Index r = 0; r < rows; ++r) zp[r] = std::tanh(zp[r]);
    }
    in = std::move(z);
  }
  return in;
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < W_.size(); ++l) n += static_cast<std::size_t>(W_[l].size() + b_[l].size());
  return n;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> p;
  p.reserve(param_count());
  for (std::size_t l = 0; l < W_.size(); ++l) {
    p.insert(p.end(), W_[l].data(), W_[l].data() + W_[l].size());
    p.insert(p.end(), b_[l].data(), b_[l].data() + b_[l].size());
  }
  return p;
}

void Mlp::unflatten(const std::vector<double>& p) {
  if (p.size() != param_count()) throw std::invalid_argument("parameter vector has the wrong size");
  std::size_t k = 0;
  for (std::size_t l = 0; l < W_.size(); ++l) {
    std::memcpy(W_[l].data(), p.data() + k, sizeof(double) * static_cast<std::size_t>(W_[l].size()));
    k += static_cast<std::size_t>(W_[l].size());
    std::memcpy(b_[l].data(), p.data() + k, sizeof(double) * static_cast<std::size_t>(b_[l].size()));
    k += static_cast<std::size_t>(b_[l].size());
  }
}

void Mlp::polyak_from(const Mlp& src, double tau) {
  if (src.sizes_ != sizes_) throw std::invalid_argument("polyak update between different architectures");
  if (tau == 1.0) {
    W_ = src.W_;
    b_ = src.b_;
    return;
  }
  for (std::size_t l = 0; l < W_.size(); ++l) {
    W_[l] = (1.0 - tau) * W_[l] + tau * src.W_[l];
    b_[l] = (1.0 - tau) * b_[l] + tau * src.b_[l];
  }
}

bool Mlp::finite() const {
  for (std::size_t l = 0; l < W_.size(); ++l) {
    if (!W_[l].allFinite() || !b_[l].allFinite()) return false;
  }
  return true;
}

std::string Mlp::arch_string() const {
  std::string s;
  for (std::size_t i = 0; i < sizes_.size(); ++i) s += (i ? "-" : "") + std::to_string(sizes_[i]);
  return s + ":tanh";
}

Adam::Adam(const Mlp& m, AdamConfig cfg) : cfg_(cfg) {
  m_.zero_like(m);
  v_.zero_like(m);
}

void Adam::step(Mlp& m, const Mlp::Grads& g) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto upd = [&](auto& p, auto& mm, auto& vv, const auto& gg) {
    mm = cfg_.beta1 * mm + (1.0 - cfg_.beta1) * gg;
    vv = cfg_.beta2 * vv + (1.0 - cfg_.beta2) * gg.cwiseProduct(gg);
    p.array() -= cfg_.lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + cfg_.eps);
  };
  for (int l = 0; l < m.layers(); ++l) {
    const auto i = static_cast<std::size_t>(l);
    if (cfg_.weight_decay > 0.0) m.W(l) *= 1.0 - cfg_.lr * cfg_.weight_decay;
    upd(m.W(l), m_.W[i], v_.W[i], g.W[i]);
    upd(m.b(l), m_.b[i], v_.b[i], g.b[i]);
  }
}

double ScalarAdam::step(double param, double grad) {
  ++t;
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
  const double mh = m / (1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const double vh = v / (1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  return param - cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
}

namespace {

constexpr char kMagic[8] = {'P', 'R', 'S', 'M', 'N', 'E', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ofstream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ConfigError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void save_networks(const std::filesystem::path& path, const std::vector<const Mlp*>& nets) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream o(path, std::ios::binary | std::ios::trunc);
  if (!o) throw std::runtime_error("cannot write checkpoint " + path.string());
  o.write(kMagic, sizeof kMagic);
  put(o, kVersion);
  put(o, static_cast<std::uint32_t>(nets.size()));
  for (const Mlp* m : nets) {
    put(o, static_cast<std::uint32_t>(m->layers()));
    for (int s : m->sizes()) put(o, static_cast<std::uint32_t>(s));
    for (int l = 0; l < m->layers(); ++l) {
      const Mat& w = m->W(l);
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) put(o, w(r, c));
      }
      for (Eigen::Index r = 0; r < m->b(l).size(); ++r) put(o, m->b(l)[r]);
    }
  }
  if (!o) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::vector<Mlp> load_networks(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ConfigError("not a network checkpoint: " + path.string());
  }
  if (get<std::uint32_t>(in, path) != kVersion) throw ConfigError("unsupported checkpoint version in " + path.string());
  const auto count = get<std::uint32_t>(in, path);
  std::vector<Mlp> nets;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto layers = get<std::uint32_t>(in, path);
    if (layers == 0 || layers > 64) throw ConfigError("bad layer count in " + path.string());
    std::vector<int> sizes;
    for (std::uint32_t i = 0; i <= layers; ++i) {
      const auto s = get<std::uint32_t>(in, path);
      if (s == 0 || s > (1u << 24)) throw ConfigError("bad layer size in " + path.string());
      sizes.push_back(static_cast<int>(s));
    }
    Rng rng(0);
    Mlp m(sizes, rng);
    for (int l = 0; l < m.layers(); ++l) {
      Mat& w = m.W(l);
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = get<double>(in, path);
      }
      for (Eigen::Index r = 0; r < m.b(l).size(); ++r) m.b(l)[r] = get<double>(in, path);
    }
    nets.push_back(std::move(m));
  }
  return nets;
}

}  // namespace prism
