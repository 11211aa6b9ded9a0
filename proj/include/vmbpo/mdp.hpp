#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vmbpo/common.hpp"
#include "vmbpo/tables.hpp"

namespace vmbpo {

/// Finite stopping-time MDP. Episodes end on hitting a terminal state;
/// transition and reward entries of terminal rows exist for table shape only
/// and are never read.
struct FiniteMdp {
  std::vector<std::string> states;
  std::vector<std::string> actions;
  std::vector<bool> terminal;                              // per state
  std::vector<std::vector<double>> reward;                 // [x][a]
  std::vector<std::vector<std::vector<double>>> transition;  // [x][a][x']
  std::vector<double> initial;                             // p0

  int num_states() const { return static_cast<int>(states.size()); }
  int num_actions() const { return static_cast<int>(actions.size()); }
  bool is_terminal(int x) const { return terminal[x]; }
  std::vector<int> nonterminal_states() const;
  int state_index(const std::string& name) const;  // -1 if absent
};

struct Trajectory {
  struct Step {
    int state;
    int action;
    double reward;
  };
  std::vector<Step> steps;
  int final_state = -1;

  int length() const { return static_cast<int>(steps.size()); }
  double total_reward() const;
};

/// True when the support graph restricted to nonterminal states has no cycle,
/// i.e. complete trajectory enumeration terminates within num_states steps.
bool acyclic_nonterminal(const FiniteMdp& mdp);

/// Returns the list of violated invariants; empty on success.
/// Checked: table shapes, row stochasticity (1 +- 1e-12, entries >= 0) of
/// nonterminal transition rows and of p0, and transience (some terminal is
/// reachable from every nonterminal on the support graph).
std::vector<std::string> validate(const FiniteMdp& mdp);

/// Throws std::invalid_argument listing all diagnostics if validate fails.
void require_valid(const FiniteMdp& mdp);

/// Emulates discounting by termination: every nonterminal transition row is
/// scaled by gamma and mass 1-gamma is routed to a designated absorbing
/// terminal (the first terminal state, appended as "absorb" if none exists).
/// Requires structurally valid input (stochastic rows, valid p0); the input
/// need not be transient -- the output always is.
FiniteMdp discount_transform(const FiniteMdp& mdp, double gamma);

/// Every trajectory of length <= max_len that ends at a terminal state,
/// starting from supp(p0), following the support of the transition kernel and
/// all actions. Probabilities are attached later, per policy. Throws
/// EnumerationBudgetError if more than `budget` partial nodes are expanded.
std::vector<Trajectory> enumerate_trajectories(const FiniteMdp& mdp, int max_len,
                                               std::size_t budget = 10'000'000);

/// log p0(x0) + sum_t [log pi(a_t|x_t) + log p(x_{t+1}|x_t,a_t)].
/// A zero-probability factor yields the -inf sentinel.
double trajectory_log_prob(const FiniteMdp& mdp, const TabularPolicy& policy,
                           const Trajectory& traj);

/// J(pi) = E[sum of rewards], by solving the linear policy-evaluation system
/// over nonterminal states. Throws TransienceError on a singular system.
double expected_return(const FiniteMdp& mdp, const TabularPolicy& policy);

/// Per-state expected return v_pi (terminals zero), same linear solve.
ValueFunction policy_return_values(const FiniteMdp& mdp, const TabularPolicy& policy);

/// Max expected return over deterministic policies (hard-max dynamic
/// programming); reference point for learning criteria.
double optimal_expected_return(const FiniteMdp& mdp);

Trajectory sample_trajectory(const FiniteMdp& mdp, const TabularPolicy& policy, Rng& rng,
                             long step_cap = 1'000'000);
Trajectory sample_trajectory(const FiniteMdp& mdp, const TabularPolicy& policy,
                             std::uint64_t seed, long step_cap = 1'000'000);

}  // namespace vmbpo
