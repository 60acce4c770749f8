#pragma once

#include "prism/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace prism {

using Mat = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// Feedforward net with tanh hidden layers and a linear output. Batches are stored column-wise
/// (features x batch).
class Mlp {
 public:
  Mlp() = default;
  /// Glorot-uniform weights, zero biases. sizes = {input, hidden..., output}.
  Mlp(std::vector<int> sizes, Rng& rng);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int layers() const { return static_cast<int>(W_.size()); }

  Mat& W(int l) { return W_[static_cast<std::size_t>(l)]; }
  const Mat& W(int l) const { return W_[static_cast<std::size_t>(l)]; }
  VecX& b(int l) { return b_[static_cast<std::size_t>(l)]; }
  const VecX& b(int l) const { return b_[static_cast<std::size_t>(l)]; }

  struct Cache {
    std::vector<Mat> act;  // act[0] = input, act[l] = output of layer l (tanh for hidden, linear last)
  };
  struct Grads {
    std::vector<Mat> W;
    std::vector<VecX> b;
    void zero_like(const Mlp& m);
    double norm() const;
    void scale(double s);
  };

  Mat forward(const Mat& X, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients for dL/d(output) into `g`; returns dL/d(input).
  Mat backward(const Cache& cache, const Mat& d_out, Grads& g) const;

  /// Single sample, fixed summation order, zero inputs skipped. Bit-identical regardless of which thread
  /// or caller evaluates it. Throws std::invalid_argument on size mismatch or non-finite input.
  VecX forward_one(const double* x, std::size_t n) const;

  std::size_t param_count() const;
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& p);
  /// this = (1 - tau) * this + tau * src
  void polyak_from(const Mlp& src, double tau);
  bool finite() const;

  std::string arch_string() const;

 private:
  std::vector<int> sizes_;
  std::vector<Mat> W_;
  std::vector<VecX> b_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, weights only
};

class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& m, AdamConfig cfg);
  void step(Mlp& m, const Mlp::Grads& g);
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  Mlp::Grads m_, v_;
  long t_ = 0;
};

/// Scalar Adam for log-alpha.
struct ScalarAdam {
  AdamConfig cfg;
  double m = 0.0, v = 0.0;
  long t = 0;
  double step(double param, double grad);
};

// ---- checkpoints ----
// Layout: "PRSMNET\0" magic, u32 version, u32 layer count, u32 sizes[layers + 1], then per layer the
// weight block (rows = outputs, row-major) followed by the bias, all little-endian f64.

void save_networks(const std::filesystem::path& path, const std::vector<const Mlp*>& nets);
std::vector<Mlp> load_networks(const std::filesystem::path& path);

}  // namespace prism
