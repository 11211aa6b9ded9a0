#pragma once

#include <array>

#include "vmbpo/mdp.hpp"

namespace vmbpo {

/// Two-action one-step fixture: states {s0, term}, r(s0,a0)=1, r(s0,a1)=0,
/// both actions lead to term with probability 1, p0(s0)=1.
FiniteMdp make_chain();

/// A root with one action and two successors g, b at probability 1/2 each;
/// g and b fall deterministically into the terminal. All rewards zero.
FiniteMdp make_twist_pair();

/// N x N goal-reaching gridworld: start at (0,0), goal at (N-1,N-1), actions
/// up/down/left/right (bump = stay), deterministic moves, step reward -0.01
/// plus +1 on the transition that enters the goal.
FiniteMdp make_gridworld(int n);

/// Layered acyclic MDP: a single root state (deterministic start), layers of
/// roughly equal width, one terminal; rewards uniform in [-1,1]; each (x,a)
/// has 1..3 successors in the next layer with random masses.
FiniteMdp make_random_mdp(int n_states, int n_actions, int layers, std::uint64_t seed);

/// Swing-up pendulum with the usual constants (g=10, m=1, l=1, dt=0.05,
/// u_max=2, speed bound 8), semi-implicit Euler and no damping. Observations
/// are [cos th, sin th, th_dot]; reward -(th^2 + 0.1 th_dot^2 + 0.001 u^2);
/// episodes truncate at 200 steps (no true terminal states).
class PendulumEnv {
 public:
  static constexpr int kObsDim = 3;
  static constexpr int kActDim = 1;
  static constexpr double kMaxTorque = 2.0;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr int kEpisodeCap = 200;

  struct StepResult {
    std::array<double, kObsDim> obs;
    double reward;
    bool terminal;   // never true for the pendulum
    bool truncated;  // episode cap reached
  };

  std::array<double, kObsDim> reset(Rng& rng);
  StepResult step(double torque);

  /// Known reward function on (observation, action); used to label synthetic
  /// transitions.
  static double reward(const std::array<double, kObsDim>& obs, double torque);

  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }
  std::array<double, kObsDim> observation() const;

 private:
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
  int steps_ = 0;
};

}  // namespace vmbpo
