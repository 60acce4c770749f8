#pragma once

#include "prism/encode.hpp"

#include <cstddef>
#include <vector>

namespace prism {

struct Transition {
  std::vector<double> s;         // policy features
  std::vector<double> s2;
  std::array<double, 4> a{};     // continuous action, normalized to [-1, 1]
  int grip = 2;                  // GripperCommand index: 0 open, 1 close, 2 hold
  double reward = 0.0;
  bool done = false;             // success-terminal; horizon truncation is not terminal
  bool is_demo = false;
  PackedFeatures reward_features;
};

/// Demo transitions live in their own store and are never evicted; agent transitions fill a ring of
/// capacity - demos.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000) : capacity_(capacity) {}

  /// Throws std::length_error when demos alone would exceed the capacity.
  void add(Transition t);

  std::size_t size() const { return demos_.size() + agent_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t demo_count() const { return demos_.size(); }

  /// Index space: [0, demo_count) demos, then agent transitions in storage order.
  const Transition& at(std::size_t i) const { return i < demos_.size() ? demos_[i] : agent_[i - demos_.size()]; }
  Transition& at(std::size_t i) { return i < demos_.size() ? demos_[i] : agent_[i - demos_.size()]; }

 private:
  std::size_t capacity_;
  std::vector<Transition> demos_;
  std::vector<Transition> agent_;
  std::size_t head_ = 0;
};

}  // namespace prism
