#include "vmbpo/mdp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace vmbpo {

namespace {

constexpr double kRowTol = 1e-12;

std::string row_diag(const std::vector<double>& row) {
  double sum = 0.0;
  for (double p : row) {
    if (!(p >= 0.0)) return "negative or non-finite entry";
    sum += p;
  }
  if (std::abs(sum - 1.0) > kRowTol) return "row not stochastic (sum " + std::to_string(sum) + ")";
  return {};
}

// Map from state index to dense index among nonterminals, -1 for terminals.
std::vector<int> nonterminal_index(const FiniteMdp& mdp) {
  std::vector<int> idx(mdp.num_states(), -1);
  int k = 0;
  for (int x = 0; x < mdp.num_states(); ++x)
    if (!mdp.is_terminal(x)) idx[x] = k++;
  return idx;
}

// Solves v = r_pi + P_pi v over nonterminal states.
ValueFunction solve_policy_values(const FiniteMdp& mdp, const TabularPolicy& policy) {
  auto idx = nonterminal_index(mdp);
  int n = 0;
  for (int v : idx) n += (v >= 0);
  ValueFunction out = ValueFunction::zeros(mdp.num_states());
  if (n == 0) return out;

  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (idx[x] < 0) continue;
    for (int a = 0; a < mdp.num_actions(); ++a) {
      double pa = policy.probs[x][a];
      if (pa <= 0.0) continue;
      b(idx[x]) += pa * mdp.reward[x][a];
      for (int y = 0; y < mdp.num_states(); ++y) {
        if (idx[y] < 0) continue;
        A(idx[x], idx[y]) -= pa * mdp.transition[x][a][y];
      }
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible())
    throw TransienceError("policy-evaluation system singular: MDP not transient under policy");
  Eigen::VectorXd v = lu.solve(b);
  if ((A * v - b).lpNorm<Eigen::Infinity>() > 1e-8 * std::max(1.0, b.lpNorm<Eigen::Infinity>()))
    throw TransienceError("policy-evaluation system ill-conditioned: MDP not transient under policy");
  for (int x = 0; x < mdp.num_states(); ++x)
    if (idx[x] >= 0) out.v[x] = v(idx[x]);
  return out;
}

}  // namespace

std::vector<int> FiniteMdp::nonterminal_states() const {
  std::vector<int> xs;
  for (int x = 0; x < num_states(); ++x)
    if (!terminal[x]) xs.push_back(x);
  return xs;
}

int FiniteMdp::state_index(const std::string& name) const {
  for (int x = 0; x < num_states(); ++x)
    if (states[x] == name) return x;
  return -1;
}

double Trajectory::total_reward() const {
  double r = 0.0;
  for (const auto& s : steps) r += s.reward;
  return r;
}

bool acyclic_nonterminal(const FiniteMdp& mdp) {
  const int nx = mdp.num_states();
  // 0 unvisited, 1 on stack, 2 done
  std::vector<int> mark(nx, 0);
  auto dfs = [&](auto&& self, int x) -> bool {
    mark[x] = 1;
    for (int a = 0; a < mdp.num_actions(); ++a)
      for (int y = 0; y < nx; ++y) {
        if (mdp.transition[x][a][y] <= 0.0 || mdp.is_terminal(y)) continue;
        if (mark[y] == 1) return false;
        if (mark[y] == 0 && !self(self, y)) return false;
      }
    mark[x] = 2;
    return true;
  };
  for (int x = 0; x < nx; ++x)
    if (!mdp.is_terminal(x) && mark[x] == 0 && !dfs(dfs, x)) return false;
  return true;
}

std::vector<std::string> validate(const FiniteMdp& mdp) {
  std::vector<std::string> diags;
  const int nx = mdp.num_states();
  const int na = mdp.num_actions();
  if (nx == 0) diags.push_back("no states");
  if (na == 0) diags.push_back("no actions");
  if (static_cast<int>(mdp.terminal.size()) != nx) diags.push_back("terminal mask shape mismatch");
  if (static_cast<int>(mdp.reward.size()) != nx) diags.push_back("reward table shape mismatch");
  if (static_cast<int>(mdp.transition.size()) != nx) diags.push_back("transition table shape mismatch");
  if (static_cast<int>(mdp.initial.size()) != nx) diags.push_back("initial distribution shape mismatch");
  if (!diags.empty()) return diags;

  for (int x = 0; x < nx; ++x) {
    if (static_cast<int>(mdp.reward[x].size()) != na) diags.push_back("reward row " + mdp.states[x] + " shape mismatch");
    if (static_cast<int>(mdp.transition[x].size()) != na) {
      diags.push_back("transition row " + mdp.states[x] + " shape mismatch");
      continue;
    }
    for (int a = 0; a < na; ++a)
      if (static_cast<int>(mdp.transition[x][a].size()) != nx)
        diags.push_back("transition row (" + mdp.states[x] + "," + mdp.actions[a] + ") shape mismatch");
  }
  if (!diags.empty()) return diags;

  for (int x = 0; x < nx; ++x) {
    if (mdp.is_terminal(x)) continue;  // terminal rows are never read
    for (int a = 0; a < na; ++a) {
      std::string why = row_diag(mdp.transition[x][a]);
      if (!why.empty())
        diags.push_back("transition (" + mdp.states[x] + "," + mdp.actions[a] + "): " + why);
    }
  }
  std::string why = row_diag(mdp.initial);
  if (!why.empty()) diags.push_back("initial distribution: " + why);

  bool any_terminal = std::any_of(mdp.terminal.begin(), mdp.terminal.end(), [](bool t) { return t; });
  if (!any_terminal) {
    diags.push_back("not transient: no terminal state");
    return diags;
  }

  // Backward reachability from the terminal set on the support graph.
  std::vector<bool> reaches(nx, false);
  for (int x = 0; x < nx; ++x) reaches[x] = mdp.is_terminal(x);
  bool changed = true;
  while (changed) {
    changed = false;
    for (int x = 0; x < nx; ++x) {
      if (reaches[x] || mdp.is_terminal(x)) continue;
      for (int a = 0; a < na && !reaches[x]; ++a)
        for (int y = 0; y < nx; ++y)
          if (mdp.transition[x][a][y] > 0.0 && reaches[y]) {
            reaches[x] = true;
            changed = true;
            break;
          }
    }
  }
  for (int x = 0; x < nx; ++x)
    if (!reaches[x])
      diags.push_back("not transient: no terminal reachable from " + mdp.states[x]);
  return diags;
}

void require_valid(const FiniteMdp& mdp) {
  auto diags = validate(mdp);
  if (diags.empty()) return;
  std::string msg = "invalid MDP:";
  for (const auto& d : diags) msg += " [" + d + "]";
  throw std::invalid_argument(msg);
}

FiniteMdp discount_transform(const FiniteMdp& mdp, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("discount_transform: gamma must lie in (0,1)");
  // Structural validity only; transience is what this transform establishes.
  auto diags = validate(mdp);
  for (const auto& d : diags)
    if (d.find("not transient") == std::string::npos)
      throw std::invalid_argument("discount_transform: " + d);

  FiniteMdp out = mdp;
  int sink = -1;
  for (int x = 0; x < out.num_states(); ++x)
    if (out.is_terminal(x)) {
      sink = x;
      break;
    }
  if (sink < 0) {
    sink = out.num_states();
    out.states.push_back("absorb");
    out.terminal.push_back(true);
    out.initial.push_back(0.0);
    out.reward.emplace_back(out.num_actions(), 0.0);
    for (auto& xrow : out.transition)
      for (auto& arow : xrow) arow.push_back(0.0);
    out.transition.emplace_back(out.num_actions(), std::vector<double>(out.num_states(), 0.0));
  }
  for (int x = 0; x < out.num_states(); ++x) {
    if (out.is_terminal(x)) continue;
    for (int a = 0; a < out.num_actions(); ++a) {
      for (double& p : out.transition[x][a]) p *= gamma;
      out.transition[x][a][sink] += 1.0 - gamma;
    }
  }
  require_valid(out);
  return out;
}

std::vector<Trajectory> enumerate_trajectories(const FiniteMdp& mdp, int max_len,
                                               std::size_t budget) {
  require_valid(mdp);
  std::vector<Trajectory> out;
  std::size_t nodes = 0;
  std::vector<Trajectory::Step> steps;

  auto rec = [&](auto&& self, int x) -> void {
    if (++nodes > budget)
      throw EnumerationBudgetError("enumerate_trajectories: node budget exceeded");
    if (mdp.is_terminal(x)) {
      out.push_back(Trajectory{steps, x});
      return;
    }
    if (static_cast<int>(steps.size()) >= max_len) return;  // incomplete; dropped
    for (int a = 0; a < mdp.num_actions(); ++a) {
      for (int y = 0; y < mdp.num_states(); ++y) {
        if (mdp.transition[x][a][y] <= 0.0) continue;
        steps.push_back({x, a, mdp.reward[x][a]});
        self(self, y);
        steps.pop_back();
      }
    }
  };
  for (int x0 = 0; x0 < mdp.num_states(); ++x0)
    if (mdp.initial[x0] > 0.0) rec(rec, x0);
  return out;
}

double trajectory_log_prob(const FiniteMdp& mdp, const TabularPolicy& policy,
                           const Trajectory& traj) {
  int x0 = traj.steps.empty() ? traj.final_state : traj.steps.front().state;
  if (x0 < 0 || x0 >= mdp.num_states()) throw std::invalid_argument("trajectory has no start state");
  if (mdp.initial[x0] <= 0.0) return kNegInf;
  double lp = std::log(mdp.initial[x0]);
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const auto& s = traj.steps[t];
    int next = (t + 1 < traj.steps.size()) ? traj.steps[t + 1].state : traj.final_state;
    double pa = policy.probs[s.state][s.action];
    double px = mdp.transition[s.state][s.action][next];
    if (pa <= 0.0 || px <= 0.0) return kNegInf;
    lp += std::log(pa) + std::log(px);
  }
  return lp;
}

ValueFunction policy_return_values(const FiniteMdp& mdp, const TabularPolicy& policy) {
  require_valid(mdp);
  require_policy(mdp, policy);
  return solve_policy_values(mdp, policy);
}

double expected_return(const FiniteMdp& mdp, const TabularPolicy& policy) {
  ValueFunction v = policy_return_values(mdp, policy);
  double j = 0.0;
  for (int x = 0; x < mdp.num_states(); ++x) j += mdp.initial[x] * v.v[x];
  return j;
}

double optimal_expected_return(const FiniteMdp& mdp) {
  require_valid(mdp);
  const int nx = mdp.num_states();
  const int na = mdp.num_actions();
  std::vector<double> v(nx, 0.0);
  for (int sweep = 0; sweep < 100000; ++sweep) {
    double delta = 0.0;
    std::vector<double> w(nx, 0.0);
    for (int x = 0; x < nx; ++x) {
      if (mdp.is_terminal(x)) continue;
      double best = kNegInf;
      for (int a = 0; a < na; ++a) {
        double q = mdp.reward[x][a];
        for (int y = 0; y < nx; ++y) q += mdp.transition[x][a][y] * v[y];
        best = std::max(best, q);
      }
      w[x] = best;
      delta = std::max(delta, std::abs(w[x] - v[x]));
    }
    v = w;
    if (delta < 1e-13) break;
  }
  // Greedy deterministic policy, then exact evaluation.
  TabularPolicy greedy{std::vector<std::vector<double>>(nx, std::vector<double>(na, 0.0))};
  for (int x = 0; x < nx; ++x) {
    int best_a = 0;
    double best = kNegInf;
    for (int a = 0; a < na; ++a) {
      double q = mdp.is_terminal(x) ? 0.0 : mdp.reward[x][a];
      if (!mdp.is_terminal(x))
        for (int y = 0; y < nx; ++y) q += mdp.transition[x][a][y] * v[y];
      if (q > best) {
        best = q;
        best_a = a;
      }
    }
    greedy.probs[x][best_a] = 1.0;
  }
  return expected_return(mdp, greedy);
}

Trajectory sample_trajectory(const FiniteMdp& mdp, const TabularPolicy& policy, Rng& rng,
                             long step_cap) {
  int x = sample_categorical(mdp.initial, rng);
  Trajectory traj;
  long t = 0;
  while (!mdp.is_terminal(x)) {
    if (++t > step_cap)
      throw TransienceError("sample_trajectory: step cap exceeded (non-transient rollout)");
    int a = sample_categorical(policy.probs[x], rng);
    int y = sample_categorical(mdp.transition[x][a], rng);
    traj.steps.push_back({x, a, mdp.reward[x][a]});
    x = y;
  }
  traj.final_state = x;
  return traj;
}

Trajectory sample_trajectory(const FiniteMdp& mdp, const TabularPolicy& policy,
                             std::uint64_t seed, long step_cap) {
  Rng rng(seed);
  return sample_trajectory(mdp, policy, rng, step_cap);
}

}  // namespace vmbpo
