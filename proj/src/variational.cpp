#include "vmbpo/variational.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace vmbpo {

namespace {

// 0*log(0/0) = 0; mass against a zero reference is a support violation.
double ratio_term(double q, double ref, const char* what) {
  if (q <= 0.0) return 0.0;
  if (ref <= 0.0) throw SupportError(std::string(what) + ": mass outside reference support");
  return q * std::log(q / ref);
}

}  // namespace

ActionValueFunction q_from_v(const FiniteMdp& mdp, Temperature eta, const ValueFunction& v) {
  ActionValueFunction q = ActionValueFunction::zeros(mdp.num_states(), mdp.num_actions());
  std::vector<double> args;
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x)) continue;
    for (int a = 0; a < mdp.num_actions(); ++a) {
      args.clear();
      for (int y = 0; y < mdp.num_states(); ++y) {
        double p = mdp.transition[x][a][y];
        if (p > 0.0) args.push_back(std::log(p) + v.v[y]);
      }
      q.q[x][a] = eta.eta * mdp.reward[x][a] + log_sum_exp(args);
    }
  }
  return q;
}

ValueFunction softmax_value(const FiniteMdp& mdp, const TabularPolicy& policy,
                            const ActionValueFunction& q) {
  ValueFunction out = ValueFunction::zeros(mdp.num_states());
  std::vector<double> args;
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x)) continue;
    args.clear();
    for (int a = 0; a < mdp.num_actions(); ++a) {
      double pa = policy.probs[x][a];
      if (pa > 0.0) args.push_back(std::log(pa) + q.q[x][a]);
    }
    out.v[x] = log_sum_exp(args);
  }
  return out;
}

TabularDynamics twist_dynamics(const FiniteMdp& mdp, const ValueFunction& v) {
  TabularDynamics out{mdp.transition};
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x)) continue;  // terminal rows copy p, never read
    for (int a = 0; a < mdp.num_actions(); ++a) {
      auto& row = out.probs[x][a];
      double shift = kNegInf;
      for (int y = 0; y < mdp.num_states(); ++y)
        if (mdp.transition[x][a][y] > 0.0) shift = std::max(shift, v.v[y]);
      double z = 0.0;
      for (int y = 0; y < mdp.num_states(); ++y) {
        double p = mdp.transition[x][a][y];
        row[y] = p > 0.0 ? p * std::exp(v.v[y] - shift) : 0.0;
        z += row[y];
      }
      for (double& p : row) p /= z;
    }
  }
  return out;
}

TabularPolicy twist_policy(const FiniteMdp& mdp, const TabularPolicy& baseline,
                           const ActionValueFunction& q) {
  TabularPolicy out = baseline;
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x)) continue;
    auto& row = out.probs[x];
    double shift = kNegInf;
    for (int a = 0; a < mdp.num_actions(); ++a)
      if (baseline.probs[x][a] > 0.0) shift = std::max(shift, q.q[x][a]);
    double z = 0.0;
    for (int a = 0; a < mdp.num_actions(); ++a) {
      double pa = baseline.probs[x][a];
      row[a] = pa > 0.0 ? pa * std::exp(q.q[x][a] - shift) : 0.0;
      z += row[a];
    }
    for (double& p : row) p /= z;
  }
  return out;
}

ValueFunction apply_induced_operator(const FiniteMdp& mdp, Temperature eta,
                                     const TabularPolicy& baseline, const TabularPolicy& q_c,
                                     const ValueFunction& v, OperatorMode mode) {
  ValueFunction out = ValueFunction::zeros(mdp.num_states());
  if (mode == OperatorMode::model_free) {
    ActionValueFunction q = q_from_v(mdp, eta, v);
    for (int x = 0; x < mdp.num_states(); ++x) {
      if (mdp.is_terminal(x)) continue;
      double acc = 0.0;
      for (int a = 0; a < mdp.num_actions(); ++a) {
        double qa = q_c.probs[x][a];
        if (qa <= 0.0) continue;
        acc += qa * q.q[x][a] - ratio_term(qa, baseline.probs[x][a], "q_c vs baseline");
      }
      out.v[x] = acc;
    }
    return out;
  }
  // Model-based form: the inner maximization realized by the twisted kernel
  // of the current V.
  TabularDynamics q_d = twist_dynamics(mdp, v);
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x)) continue;
    double acc = 0.0;
    for (int a = 0; a < mdp.num_actions(); ++a) {
      double qa = q_c.probs[x][a];
      if (qa <= 0.0) continue;
      double inner = 0.0;
      for (int y = 0; y < mdp.num_states(); ++y) {
        double qy = q_d.probs[x][a][y];
        if (qy <= 0.0) continue;
        inner += qy * v.v[y] - ratio_term(qy, mdp.transition[x][a][y], "q_d vs kernel");
      }
      acc += qa * (eta.eta * mdp.reward[x][a] + inner) -
             ratio_term(qa, baseline.probs[x][a], "q_c vs baseline");
    }
    out.v[x] = acc;
  }
  return out;
}

ValueFunction apply_optimal_operator(const FiniteMdp& mdp, Temperature eta,
                                     const TabularPolicy& baseline, const ValueFunction& v) {
  ValueFunction out = ValueFunction::zeros(mdp.num_states());
  std::vector<double> args;
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x)) continue;
    args.clear();
    for (int a = 0; a < mdp.num_actions(); ++a) {
      double pa = baseline.probs[x][a];
      if (pa <= 0.0) continue;
      for (int y = 0; y < mdp.num_states(); ++y) {
        double p = mdp.transition[x][a][y];
        if (p > 0.0)
          args.push_back(std::log(pa) + std::log(p) + eta.eta * mdp.reward[x][a] + v.v[y]);
      }
    }
    out.v[x] = log_sum_exp(args);
  }
  return out;
}

namespace {

void check_q_support(const FiniteMdp& mdp, const TabularPolicy& q_c, const TabularDynamics& q_d,
                     const TabularPolicy& baseline) {
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x)) continue;
    for (int a = 0; a < mdp.num_actions(); ++a) {
      if (q_c.probs[x][a] > 0.0 && baseline.probs[x][a] <= 0.0)
        throw SupportError("elbo: q_c has mass outside the baseline support");
      for (int y = 0; y < mdp.num_states(); ++y)
        if (q_d.probs[x][a][y] > 0.0 && mdp.transition[x][a][y] <= 0.0)
          throw SupportError("elbo: q_d has mass outside the kernel support");
    }
  }
}

}  // namespace

double elbo(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& q_c,
            const TabularDynamics& q_d, const TabularPolicy& baseline, int max_len,
            std::size_t budget) {
  check_q_support(mdp, q_c, q_d, baseline);
  if (max_len < 0) {
    if (!acyclic_nonterminal(mdp))
      throw std::invalid_argument("elbo: cyclic fixture needs an explicit horizon");
    max_len = mdp.num_states();
  }
  auto trajectories = enumerate_trajectories(mdp, max_len, budget);
  double total = 0.0;
  for (const auto& traj : trajectories) {
    int x0 = traj.steps.empty() ? traj.final_state : traj.steps.front().state;
    double prob = mdp.initial[x0];
    double acc = 0.0;
    for (std::size_t t = 0; t < traj.steps.size() && prob > 0.0; ++t) {
      const auto& s = traj.steps[t];
      int next = (t + 1 < traj.steps.size()) ? traj.steps[t + 1].state : traj.final_state;
      double qa = q_c.probs[s.state][s.action];
      double qy = q_d.probs[s.state][s.action][next];
      if (qa <= 0.0 || qy <= 0.0) {
        prob = 0.0;
        break;
      }
      prob *= qa * qy;
      acc += eta.eta * s.reward - std::log(qa / baseline.probs[s.state][s.action]) -
             std::log(qy / mdp.transition[s.state][s.action][next]);
    }
    if (prob > 0.0) total += prob * acc;
  }
  return total;
}

double elbo_linear(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& q_c,
                   const TabularDynamics& q_d, const TabularPolicy& baseline) {
  check_q_support(mdp, q_c, q_d, baseline);
  // Policy evaluation under (q_c, q_d) with per-step reward
  // eta*r(x,a) - log(q_c/pi) - E_{q_d}[log(q_d/p)].
  auto nonterminal = mdp.nonterminal_states();
  std::vector<int> idx(mdp.num_states(), -1);
  for (std::size_t k = 0; k < nonterminal.size(); ++k) idx[nonterminal[k]] = static_cast<int>(k);
  const int n = static_cast<int>(nonterminal.size());
  if (n == 0) return 0.0;

  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (int x : nonterminal) {
    for (int a = 0; a < mdp.num_actions(); ++a) {
      double qa = q_c.probs[x][a];
      if (qa <= 0.0) continue;
      double step = eta.eta * mdp.reward[x][a];
      step -= std::log(qa / baseline.probs[x][a]);
      for (int y = 0; y < mdp.num_states(); ++y) {
        double qy = q_d.probs[x][a][y];
        if (qy <= 0.0) continue;
        step -= qy * std::log(qy / mdp.transition[x][a][y]);
        if (idx[y] >= 0) A(idx[x], idx[y]) -= qa * qy;
      }
      b(idx[x]) += qa * step;
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible())
    throw TransienceError("elbo_linear: occupancy system singular under (q_c,q_d)");
  Eigen::VectorXd v = lu.solve(b);
  double total = 0.0;
  for (int x : nonterminal) total += mdp.initial[x] * v(idx[x]);
  return total;
}

double log_likelihood(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& baseline,
                      int max_len, std::size_t budget) {
  if (max_len < 0) {
    if (!acyclic_nonterminal(mdp))
      throw std::invalid_argument("log_likelihood: cyclic fixture needs an explicit horizon");
    max_len = mdp.num_states();
  }
  auto trajectories = enumerate_trajectories(mdp, max_len, budget);
  std::vector<double> args;
  args.reserve(trajectories.size());
  for (const auto& traj : trajectories) {
    double lp = trajectory_log_prob(mdp, baseline, traj);
    if (lp == kNegInf) continue;
    args.push_back(lp + eta.eta * traj.total_reward());
  }
  return log_sum_exp(args);
}

}  // namespace vmbpo
