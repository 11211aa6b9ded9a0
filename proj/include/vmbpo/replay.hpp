#pragma once

#include <deque>

#include "vmbpo/common.hpp"

namespace vmbpo {

enum class Source { real, synthetic };

template <class Obs, class Act>
struct Transition {
  Obs state;
  Act action;
  double reward = 0.0;
  Obs next_state;
  bool terminal = false;   // true termination: no bootstrap through next_state
  bool truncated = false;  // time limit: bootstrap continues
  Source source = Source::real;
};

/// Bounded FIFO with a uniform sampler. Each buffer accepts exactly one
/// transition source, keeping real and synthetic experience disjoint.
template <class Obs, class Act>
class ReplayBuffer {
 public:
  using Item = Transition<Obs, Act>;

  ReplayBuffer(std::size_t capacity, Source expected)
      : capacity_(capacity), expected_(expected) {
    if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
  }

  void push(Item t) {
    if (t.source != expected_)
      throw std::invalid_argument("replay buffer rejects transitions from the other source");
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
  }

  const Item& sample(Rng& rng) const {
    if (items_.empty()) throw std::invalid_argument("sampling from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    return items_[pick(rng)];
  }

  std::vector<Item> sample_batch(int n, Rng& rng) const {
    std::vector<Item> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(sample(rng));
    return out;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  Source expected_source() const { return expected_; }
  const Item& operator[](std::size_t i) const { return items_[i]; }

 private:
  std::size_t capacity_;
  Source expected_;
  std::deque<Item> items_;
};

}  // namespace vmbpo
