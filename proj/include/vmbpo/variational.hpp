#pragma once

#include "vmbpo/mdp.hpp"
#include "vmbpo/tables.hpp"

namespace vmbpo {

/// Positive temperature scaling rewards into log-evidence units.
struct Temperature {
  explicit Temperature(double eta_) : eta(eta_) {
    if (!(eta_ > 0.0)) throw std::invalid_argument("temperature must be positive");
  }
  double eta;
};

enum class OperatorMode { model_based, model_free };

/// Q(x,a) = eta*r(x,a) + log sum_x' p(x'|x,a) exp(V(x')), max-shifted.
/// Terminal rows stay zero.
ActionValueFunction q_from_v(const FiniteMdp& mdp, Temperature eta, const ValueFunction& v);

/// V(x) = log sum_a pi(a|x) exp(Q(x,a)), max-shifted; terminals forced to 0.
ValueFunction softmax_value(const FiniteMdp& mdp, const TabularPolicy& policy,
                            const ActionValueFunction& q);

/// Exponential twisting of the kernel: q_d(x'|x,a) ∝ p(x'|x,a) exp(V(x')).
/// Supports are preserved; terminal rows copy p.
TabularDynamics twist_dynamics(const FiniteMdp& mdp, const ValueFunction& v);

/// Exponential twisting of the policy: q_c(a|x) ∝ pi(a|x) exp(Q(x,a)).
/// Terminal rows copy the baseline.
TabularPolicy twist_policy(const FiniteMdp& mdp, const TabularPolicy& baseline,
                           const ActionValueFunction& q);

/// One application of the q_c-induced soft operator.
/// model_based realizes the inner maximization with the twisted kernel of the
/// current V; model_free uses the action-value form directly. The two agree.
/// Throws SupportError if q_c places mass where the baseline has none.
ValueFunction apply_induced_operator(const FiniteMdp& mdp, Temperature eta,
                                     const TabularPolicy& baseline, const TabularPolicy& q_c,
                                     const ValueFunction& v, OperatorMode mode);

/// One application of the optimal soft operator:
/// T[V](x) = log sum_{a,x'} pi(a|x) p(x'|x,a) exp(eta*r(x,a) + V(x')).
ValueFunction apply_optimal_operator(const FiniteMdp& mdp, Temperature eta,
                                     const TabularPolicy& baseline, const ValueFunction& v);

/// Exact lower-bound objective of (q_c, q_d) against the baseline:
/// E_q[sum_t eta*r - log(q_c/pi) - log(q_d/p)] over enumerated trajectories
/// under (p0, q_d, q_c). max_len < 0 enumerates to the state count
/// (complete for acyclic fixtures). Throws SupportError on support violations
/// and EnumerationBudgetError past the node budget.
double elbo(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& q_c,
            const TabularDynamics& q_d, const TabularPolicy& baseline, int max_len = -1,
            std::size_t budget = 10'000'000);

/// Same objective evaluated exactly by the linear occupancy solve; valid for
/// any transient (q_c, q_d), cyclic fixtures included.
double elbo_linear(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& q_c,
                   const TabularDynamics& q_d, const TabularPolicy& baseline);

/// log sum_xi p_pi(xi) exp(eta * return(xi)) over enumerated trajectories,
/// max-shifted.
double log_likelihood(const FiniteMdp& mdp, Temperature eta, const TabularPolicy& baseline,
                      int max_len = -1, std::size_t budget = 10'000'000);

}  // namespace vmbpo
