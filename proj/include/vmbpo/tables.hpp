#pragma once

#include <vector>

#include "vmbpo/common.hpp"

namespace vmbpo {

struct FiniteMdp;

/// State value table. Convention: v(x) = 0 for every terminal x.
struct ValueFunction {
  std::vector<double> v;

  static ValueFunction zeros(int n_states) { return ValueFunction{std::vector<double>(n_states, 0.0)}; }
  double operator()(int x) const { return v[x]; }
  int size() const { return static_cast<int>(v.size()); }
};

/// Action value table q[x][a]; terminal rows are kept zero and never read.
struct ActionValueFunction {
  std::vector<std::vector<double>> q;

  static ActionValueFunction zeros(int n_states, int n_actions) {
    return ActionValueFunction{std::vector<std::vector<double>>(n_states, std::vector<double>(n_actions, 0.0))};
  }
  double operator()(int x, int a) const { return q[x][a]; }
};

/// Row-stochastic table probs[x][a]. Used for the baseline policy and for
/// variational control strategies alike.
struct TabularPolicy {
  std::vector<std::vector<double>> probs;

  double operator()(int a, int x) const { return probs[x][a]; }
  int num_states() const { return static_cast<int>(probs.size()); }

  static TabularPolicy uniform(int n_states, int n_actions);
  static TabularPolicy deterministic(int n_states, int n_actions, int action);
};

/// Row-stochastic kernel probs[x][a][x']; supports must stay inside the
/// reference kernel's supports.
struct TabularDynamics {
  std::vector<std::vector<std::vector<double>>> probs;

  double operator()(int next, int x, int a) const { return probs[x][a][next]; }
};

/// Diagnostics for policy tables against an MDP's shape; empty means valid.
std::vector<std::string> validate_policy(const FiniteMdp& mdp, const TabularPolicy& policy);
/// Diagnostics for a dynamics table: shape, row-stochasticity, and support
/// containment w.r.t. the MDP's transition kernel.
std::vector<std::string> validate_dynamics(const FiniteMdp& mdp, const TabularDynamics& dynamics);

void require_policy(const FiniteMdp& mdp, const TabularPolicy& policy);
void require_dynamics(const FiniteMdp& mdp, const TabularDynamics& dynamics);

double max_abs_diff(const ValueFunction& a, const ValueFunction& b);
double max_abs_diff(const TabularPolicy& a, const TabularPolicy& b);

}  // namespace vmbpo
