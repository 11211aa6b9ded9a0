#include "vmbpo/solvers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace vmbpo {

namespace {

double optimal_residual(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& baseline,
                        const ValueFunction& v) {
  return max_abs_diff(apply_optimal_operator(mdp, eta, baseline, v), v);
}

// Model-based application of the optimal operator: the inner maximization is
// realized by the twisted kernel, the outer one by the twisted policy.
ValueFunction apply_optimal_operator_twisted(const FiniteMdp& mdp, Temperature eta,
                                             const TabularPolicy& baseline,
                                             const ValueFunction& v) {
  TabularDynamics q_d = twist_dynamics(mdp, v);
  ActionValueFunction inner = ActionValueFunction::zeros(mdp.num_states(), mdp.num_actions());
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x)) continue;
    for (int a = 0; a < mdp.num_actions(); ++a) {
      double acc = eta.eta * mdp.reward[x][a];
      for (int y = 0; y < mdp.num_states(); ++y) {
        double qy = q_d.probs[x][a][y];
        if (qy <= 0.0) continue;
        acc += qy * (v.v[y] - std::log(qy / mdp.transition[x][a][y]));
      }
      inner.q[x][a] = acc;
    }
  }
  TabularPolicy q_c = twist_policy(mdp, baseline, inner);
  ValueFunction out = ValueFunction::zeros(mdp.num_states());
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x)) continue;
    double acc = 0.0;
    for (int a = 0; a < mdp.num_actions(); ++a) {
      double qa = q_c.probs[x][a];
      if (qa <= 0.0) continue;
      acc += qa * (inner.q[x][a] - std::log(qa / baseline.probs[x][a]));
    }
    out.v[x] = acc;
  }
  return out;
}

EStepSolution run_pi(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& baseline,
                     OperatorMode mode, const SolverConfig& cfg) {
  require_valid(mdp);
  require_policy(mdp, baseline);
  cfg.require_valid();

  TabularPolicy q_c = baseline;
  EStepSolution sol;
  PolicyEvaluation eval;
  for (int k = 1; k <= cfg.max_sweeps; ++k) {
    eval = policy_evaluation(mdp, eta, baseline, q_c, mode, cfg);
    sol.value_trace.push_back(eval.v);
    TabularPolicy next = policy_improvement(mdp, baseline, eval.q, cfg);
    double change = max_abs_diff(next, q_c);
    q_c = std::move(next);
    double resid = optimal_residual(mdp, eta, baseline, eval.v);
    sol.iterations = k;
    sol.residual = resid;
    if (change < cfg.tolerance && resid <= cfg.tolerance) {
      sol.v_pi = eval.v;
      sol.q_pi = std::move(eval.q);
      sol.q_c_star = std::move(q_c);
      sol.q_d_star = twist_dynamics(mdp, sol.v_pi);
      return sol;
    }
  }
  throw NonConvergenceError("policy iteration did not converge", sol.residual);
}

}  // namespace

PolicyEvaluation policy_evaluation(const FiniteMdp& mdp, Temperature eta,
                                   const TabularPolicy& baseline, const TabularPolicy& q_c,
                                   OperatorMode mode, const SolverConfig& cfg) {
  cfg.require_valid();
  PolicyEvaluation out;
  out.v = ValueFunction::zeros(mdp.num_states());
  for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
    ValueFunction next = apply_induced_operator(mdp, eta, baseline, q_c, out.v, mode);
    out.residual = max_abs_diff(next, out.v);
    out.v = std::move(next);
    out.sweeps = sweep;
    if (out.residual <= cfg.tolerance) {
      out.q = q_from_v(mdp, eta, out.v);
      return out;
    }
  }
  throw NonConvergenceError("policy evaluation did not converge", out.residual);
}

TabularPolicy policy_improvement(const FiniteMdp& mdp, const TabularPolicy& baseline,
                                 const ActionValueFunction& q, const SolverConfig& cfg) {
  if (cfg.improvement_mode == ImprovementMode::closed_form)
    return twist_policy(mdp, baseline, q);

  // Reverse-KL projection onto the simplex, per state: mirror-descent steps
  // log q <- (1-s) log q + s (log pi + Q) - log Z, iterated to stationarity.
  const double s = 0.5;
  TabularPolicy out = baseline;
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x)) continue;
    const int na = mdp.num_actions();
    std::vector<double> target(na, kNegInf);  // log pi + Q up to a constant
    double shift = kNegInf;
    for (int a = 0; a < na; ++a)
      if (baseline.probs[x][a] > 0.0) {
        target[a] = std::log(baseline.probs[x][a]) + q.q[x][a];
        shift = std::max(shift, target[a]);
      }
    std::vector<double> logq(na, kNegInf);
    for (int a = 0; a < na; ++a)
      if (target[a] > kNegInf) target[a] -= shift;
    double z0 = 0.0;
    for (int a = 0; a < na; ++a)
      if (baseline.probs[x][a] > 0.0) z0 += baseline.probs[x][a];
    for (int a = 0; a < na; ++a)
      if (baseline.probs[x][a] > 0.0) logq[a] = std::log(baseline.probs[x][a] / z0);

    for (int it = 0; it < 200; ++it) {
      std::vector<double> mixed(na, kNegInf);
      for (int a = 0; a < na; ++a)
        if (logq[a] > kNegInf) mixed[a] = (1.0 - s) * logq[a] + s * target[a];
      double z = log_sum_exp(mixed);
      double change = 0.0;
      for (int a = 0; a < na; ++a) {
        if (mixed[a] == kNegInf) continue;
        mixed[a] -= z;
        change = std::max(change, std::abs(std::exp(mixed[a]) - std::exp(logq[a])));
      }
      logq = std::move(mixed);
      if (change < 1e-15) break;
    }
    for (int a = 0; a < na; ++a) out.probs[x][a] = logq[a] == kNegInf ? 0.0 : std::exp(logq[a]);
    double z = 0.0;
    for (double p : out.probs[x]) z += p;
    for (double& p : out.probs[x]) p /= z;
  }
  return out;
}

EStepSolution model_based_pi(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& baseline,
                             const SolverConfig& cfg) {
  return run_pi(mdp, eta, baseline, OperatorMode::model_based, cfg);
}

EStepSolution model_free_pi(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& baseline,
                            const SolverConfig& cfg) {
  return run_pi(mdp, eta, baseline, OperatorMode::model_free, cfg);
}

EStepSolution value_iteration(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& baseline,
                              OperatorMode mode, const SolverConfig& cfg,
                              const ValueFunction* v0) {
  require_valid(mdp);
  require_policy(mdp, baseline);
  cfg.require_valid();

  EStepSolution sol;
  ValueFunction v = ValueFunction::zeros(mdp.num_states());
  if (v0) {
    v = *v0;
    for (int x = 0; x < mdp.num_states(); ++x)
      if (mdp.is_terminal(x)) v.v[x] = 0.0;  // terminal-zero convention
  }
  for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
    ValueFunction next = mode == OperatorMode::model_free
                             ? apply_optimal_operator(mdp, eta, baseline, v)
                             : apply_optimal_operator_twisted(mdp, eta, baseline, v);
    sol.residual = max_abs_diff(next, v);
    v = std::move(next);
    sol.iterations = sweep;
    if (sol.residual <= cfg.tolerance) {
      sol.v_pi = std::move(v);
      sol.q_pi = q_from_v(mdp, eta, sol.v_pi);
      sol.q_c_star = twist_policy(mdp, baseline, sol.q_pi);
      sol.q_d_star = twist_dynamics(mdp, sol.v_pi);
      return sol;
    }
  }
  throw NonConvergenceError("value iteration did not converge", sol.residual);
}

std::vector<double> occupancy_weights(const FiniteMdp& mdp, const TabularPolicy& q_c,
                                      const TabularDynamics& q_d) {
  auto nonterminal = mdp.nonterminal_states();
  std::vector<int> idx(mdp.num_states(), -1);
  for (std::size_t k = 0; k < nonterminal.size(); ++k) idx[nonterminal[k]] = static_cast<int>(k);
  const int n = static_cast<int>(nonterminal.size());
  std::vector<double> out(mdp.num_states(), 0.0);
  if (n == 0) return out;

  // d = p0 + P^T d over nonterminals, P(x,y) = sum_a q_c(a|x) q_d(y|x,a).
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (int x : nonterminal) {
    b(idx[x]) = mdp.initial[x];
    for (int a = 0; a < mdp.num_actions(); ++a) {
      double qa = q_c.probs[x][a];
      if (qa <= 0.0) continue;
      for (int y : nonterminal) {
        double qy = q_d.probs[x][a][y];
        if (qy > 0.0) A(idx[y], idx[x]) -= qa * qy;
      }
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible())
    throw TransienceError("occupancy system singular: variational pair not transient");
  Eigen::VectorXd d = lu.solve(b);
  for (int x : nonterminal) out[x] = d(idx[x]);
  return out;
}

TabularPolicy m_step_exact(const FiniteMdp& mdp, const EStepSolution& e_sol,
                           const TabularPolicy& baseline, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("m_step_exact: lambda must be >= 0");
  std::vector<double> visits = occupancy_weights(mdp, e_sol.q_c_star, e_sol.q_d_star);

  TabularPolicy out = baseline;
  for (int x = 0; x < mdp.num_states(); ++x) {
    if (mdp.is_terminal(x) || visits[x] <= 0.0) continue;
    // Per-state maximizer of sum_a (q_c*(a) + lambda*pi_old(a)) log pi(a)
    // over the simplex; the visitation weight scales the whole objective.
    const int na = mdp.num_actions();
    double z = 0.0;
    std::vector<double> coef(na, 0.0);
    for (int a = 0; a < na; ++a) {
      coef[a] = e_sol.q_c_star.probs[x][a] + lambda * baseline.probs[x][a];
      z += coef[a];
    }
    double stationarity = 0.0;
    for (int a = 0; a < na; ++a) {
      out.probs[x][a] = coef[a] / z;
      if (out.probs[x][a] > 0.0)
        stationarity = std::max(stationarity, std::abs(coef[a] / out.probs[x][a] - z));
    }
    if (stationarity > 1e-10 * std::max(1.0, z))
      throw NumericalError("m_step_exact: stationarity check failed", x);
  }
  return out;
}

std::vector<EmRecord> em_solve(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& pi0,
                               int n_em_iters, double lambda, const SolverConfig& cfg,
                               EStepAlgo algo) {
  require_valid(mdp);
  require_policy(mdp, pi0);
  const bool enumerable = acyclic_nonterminal(mdp);

  auto solve_e_step = [&](const TabularPolicy& pi) -> EStepSolution {
    switch (algo) {
      case EStepAlgo::vi_model_free:
        return value_iteration(mdp, eta, pi, OperatorMode::model_free, cfg);
      case EStepAlgo::vi_model_based:
        return value_iteration(mdp, eta, pi, OperatorMode::model_based, cfg);
      case EStepAlgo::pi_model_based:
        return model_based_pi(mdp, eta, pi, cfg);
      case EStepAlgo::pi_model_free:
        return model_free_pi(mdp, eta, pi, cfg);
    }
    throw std::invalid_argument("em_solve: unknown E-step algorithm");
  };

  std::vector<EmRecord> records;
  TabularPolicy pi = pi0;
  for (int k = 0; k < n_em_iters; ++k) {
    EmRecord rec;
    rec.iteration = k;
    rec.baseline = pi;
    rec.e_step = solve_e_step(pi);
    double fp = 0.0;
    for (int x = 0; x < mdp.num_states(); ++x) fp += mdp.initial[x] * rec.e_step.v_pi.v[x];
    rec.fixed_point_value = fp;
    if (enumerable) {
      rec.elbo_value = elbo(mdp, eta, rec.e_step.q_c_star, rec.e_step.q_d_star, pi);
      rec.log_likelihood_value = log_likelihood(mdp, eta, pi);
    } else {
      rec.elbo_value = elbo_linear(mdp, eta, rec.e_step.q_c_star, rec.e_step.q_d_star, pi);
      rec.log_likelihood_value = fp;
    }
    pi = m_step_exact(mdp, rec.e_step, pi, lambda);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace vmbpo
