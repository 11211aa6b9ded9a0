#pragma once

#include "vmbpo/variational.hpp"

namespace vmbpo {

enum class ImprovementMode { closed_form, kl_projection };

struct SolverConfig {
  double tolerance = 1e-10;
  int max_sweeps = 100000;
  ImprovementMode improvement_mode = ImprovementMode::closed_form;

  void require_valid() const {
    if (!(tolerance > 0.0)) throw std::invalid_argument("solver tolerance must be positive");
    if (max_sweeps <= 0) throw std::invalid_argument("solver max_sweeps must be positive");
  }
};

/// Converged inner-loop solution: the twisted pair, its value functions, and
/// the sup-norm residual of the optimal operator at v_pi.
struct EStepSolution {
  TabularPolicy q_c_star;
  TabularDynamics q_d_star;
  ValueFunction v_pi;
  ActionValueFunction q_pi;
  int iterations = 0;
  double residual = 0.0;
  // Per-improvement-iteration values (policy iteration only), for monotone
  // improvement audits.
  std::vector<ValueFunction> value_trace;
};

struct PolicyEvaluation {
  ValueFunction v;
  ActionValueFunction q;
  int sweeps = 0;
  double residual = 0.0;
};

/// Fixed point of the q_c-induced operator by Jacobi full sweeps from V=0.
/// Throws NonConvergenceError past max_sweeps.
PolicyEvaluation policy_evaluation(const FiniteMdp& mdp, Temperature eta,
                                   const TabularPolicy& baseline, const TabularPolicy& q_c,
                                   OperatorMode mode, const SolverConfig& cfg);

/// closed_form: the exponential twist of the baseline by q. kl_projection:
/// per-state mirror-descent minimization of the reverse KL to the twisted
/// target, iterated to stationarity (the minimizer coincides with the twist).
TabularPolicy policy_improvement(const FiniteMdp& mdp, const TabularPolicy& baseline,
                                 const ActionValueFunction& q, const SolverConfig& cfg);

EStepSolution model_based_pi(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& baseline,
                             const SolverConfig& cfg);
EStepSolution model_free_pi(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& baseline,
                            const SolverConfig& cfg);

EStepSolution value_iteration(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& baseline,
                              OperatorMode mode, const SolverConfig& cfg,
                              const ValueFunction* v0 = nullptr);

/// Expected visit counts per state under (p0, q_d, q_c), by linear solve.
/// Terminal entries are zero. Throws TransienceError on singular systems.
std::vector<double> occupancy_weights(const FiniteMdp& mdp, const TabularPolicy& q_c,
                                      const TabularDynamics& q_d);

/// Baseline update given the converged variational pair. lambda = 0 returns
/// q_c_star on every visited state; lambda > 0 returns the per-state maximizer
/// of E_{q*}[log pi] - lambda*KL(pi_old || pi) over the simplex (stationarity
/// verified to 1e-10). Unvisited states keep the old row.
TabularPolicy m_step_exact(const FiniteMdp& mdp, const EStepSolution& e_sol,
                           const TabularPolicy& baseline, double lambda);

enum class EStepAlgo { vi_model_free, vi_model_based, pi_model_based, pi_model_free };

struct EmRecord {
  int iteration = 0;
  TabularPolicy baseline;       // the policy the E-step was solved against
  EStepSolution e_step;
  double elbo_value = 0.0;      // elbo(q*_k; pi_k)
  double log_likelihood_value = 0.0;  // of pi_k
  double fixed_point_value = 0.0;     // sum_x p0(x) v_pi(x)
};

std::vector<EmRecord> em_solve(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& pi0,
                               int n_em_iters, double lambda, const SolverConfig& cfg,
                               EStepAlgo algo = EStepAlgo::vi_model_free);

}  // namespace vmbpo
