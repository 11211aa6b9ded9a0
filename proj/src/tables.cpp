#include "vmbpo/tables.hpp"

#include <algorithm>
#include <cmath>

#include "vmbpo/mdp.hpp"

namespace vmbpo {

namespace {

constexpr double kRowTol = 1e-12;

bool row_stochastic(const std::vector<double>& row, std::string* why) {
  double sum = 0.0;
  for (double p : row) {
    if (!(p >= 0.0)) {
      if (why) *why = "negative or non-finite entry";
      return false;
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kRowTol) {
    if (why) *why = "row not stochastic (sum " + std::to_string(sum) + ")";
    return false;
  }
  return true;
}

}  // namespace

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions) {
  return TabularPolicy{std::vector<std::vector<double>>(
      n_states, std::vector<double>(n_actions, 1.0 / n_actions))};
}

TabularPolicy TabularPolicy::deterministic(int n_states, int n_actions, int action) {
  TabularPolicy p{std::vector<std::vector<double>>(n_states, std::vector<double>(n_actions, 0.0))};
  for (auto& row : p.probs) row[action] = 1.0;
  return p;
}

std::vector<std::string> validate_policy(const FiniteMdp& mdp, const TabularPolicy& policy) {
  std::vector<std::string> diags;
  if (policy.num_states() != mdp.num_states()) {
    diags.push_back("policy has wrong number of state rows");
    return diags;
  }
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (static_cast<int>(policy.probs[x].size()) != mdp.num_actions()) {
      diags.push_back("policy row " + mdp.states[x] + " has wrong arity");
      continue;
    }
    if (mdp.is_terminal(x)) continue;  // terminal rows are never read
    std::string why;
    if (!row_stochastic(policy.probs[x], &why))
      diags.push_back("policy row " + mdp.states[x] + ": " + why);
  }
  return diags;
}

std::vector<std::string> validate_dynamics(const FiniteMdp& mdp, const TabularDynamics& dynamics) {
  std::vector<std::string> diags;
  if (static_cast<int>(dynamics.probs.size()) != mdp.num_states()) {
    diags.push_back("dynamics has wrong number of state rows");
    return diags;
  }
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x)) continue;
    if (static_cast<int>(dynamics.probs[x].size()) != mdp.num_actions()) {
      diags.push_back("dynamics row " + mdp.states[x] + " has wrong arity");
      continue;
    }
    for (int a = 0; a < mdp.num_actions(); ++a) {
      const auto& row = dynamics.probs[x][a];
      if (static_cast<int>(row.size()) != mdp.num_states()) {
        diags.push_back("dynamics row (" + mdp.states[x] + "," + mdp.actions[a] + ") has wrong arity");
        continue;
      }
      std::string why;
      if (!row_stochastic(row, &why)) {
        diags.push_back("dynamics row (" + mdp.states[x] + "," + mdp.actions[a] + "): " + why);
        continue;
      }
      for (int y = 0; y < mdp.num_states(); ++y) {
        if (row[y] > 0.0 && mdp.transition[x][a][y] == 0.0) {
          diags.push_back("dynamics row (" + mdp.states[x] + "," + mdp.actions[a] +
                          ") has mass outside the kernel support");
          break;
        }
      }
    }
  }
  return diags;
}

void require_policy(const FiniteMdp& mdp, const TabularPolicy& policy) {
  auto diags = validate_policy(mdp, policy);
  if (!diags.empty()) throw std::invalid_argument("invalid policy: " + diags.front());
}

void require_dynamics(const FiniteMdp& mdp, const TabularDynamics& dynamics) {
  auto diags = validate_dynamics(mdp, dynamics);
  if (!diags.empty()) throw std::invalid_argument("invalid dynamics: " + diags.front());
}

double max_abs_diff(const ValueFunction& a, const ValueFunction& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

double max_abs_diff(const TabularPolicy& a, const TabularPolicy& b) {
  double m = 0.0;
  for (std::size_t x = 0; x < a.probs.size(); ++x)
    for (std::size_t i = 0; i < a.probs[x].size(); ++i)
      m = std::max(m, std::abs(a.probs[x][i] - b.probs[x][i]));
  return m;
}

}  // namespace vmbpo
