#pragma once

#include <functional>
#include <utility>

#include "vmbpo/mdp.hpp"
#include "vmbpo/nets.hpp"
#include "vmbpo/replay.hpp"
#include "vmbpo/tables.hpp"

namespace vmbpo {

/// The eight parameterized functions over a finite MDP: one parameter per
/// table cell, softmax rows where a distribution is required. The variational
/// kernel is a softmax over each (x,a) support of the true kernel, keeping
/// zero-probability transitions out of its support.
class TabularVmbpoNets {
 public:
  using Obs = int;
  using Act = int;
  using Tr = Transition<int, int>;
  using RewardFn = std::function<double(int, int)>;

  struct Triple {
    int state;
    int action;
    int next;
  };

  explicit TabularVmbpoNets(const FiniteMdp& mdp);

  // --- interaction ---
  int act(int x, Rng& rng) const;                   // a ~ pi(.|x)
  int sample_action(int x, Rng& rng) const;         // a ~ q_c(.|x)
  int sample_next(int x, int a, Rng& rng) const;    // x' ~ q_d(.|x,a)
  Tr synthesize(int x, const RewardFn& reward, Rng& rng, double explore_sigma = 0.0) const;

  // --- sampled updates (one Adam step per `steps`, full-batch gradients) ---
  double update_dynamics(const std::vector<Tr>& batch, const std::vector<double>* weights,
                         double eta, double lr, int steps);
  double update_log_ratio(const std::vector<Triple>& real, const std::vector<double>* real_w,
                          const std::vector<Triple>& synthetic,
                          const std::vector<double>* synthetic_w, double lr, int steps);
  double update_q(const std::vector<Tr>& batch, const std::vector<double>* weights, double eta,
                  double lr, int steps);
  double update_v(const std::vector<int>& states, const std::vector<double>* weights, double lr,
                  int steps, Rng& rng);
  double update_actor(const std::vector<int>& states, const std::vector<double>* weights,
                      double lr, int steps, Rng& rng);
  void soft_target_update(double tau);
  void m_step_copy();
  double m_step_map(const std::vector<std::pair<int, int>>& batch, double lambda, double lr,
                    int steps);
  double mfe_update_q(const std::vector<Tr>& batch, const std::vector<double>* weights, double eta,
                      double tau_exp, double lr, int steps);
  double mfe_update_v(const std::vector<int>& states, const std::vector<double>* weights,
                      double lr, int steps, Rng& rng);

  // --- exact tables (evaluation, diagnostics, oracle tests) ---
  TabularPolicy policy_table() const;
  TabularPolicy qc_table() const;
  TabularDynamics qd_table() const;
  double v_value(int x) const { return mdp_.is_terminal(x) ? 0.0 : v_[x]; }
  double q_value(int x, int a) const { return q_[x * na_ + a]; }
  double v_target(int x) const { return mdp_.is_terminal(x) ? 0.0 : v_tgt_[x]; }
  double q_target(int x, int a) const { return q_tgt_[x * na_ + a]; }
  double nu_value(int x, int a, int next) const;

  // --- test fixtures: pin specific functions ---
  void set_v_target(const ValueFunction& v);
  void set_q_target(const ActionValueFunction& q);
  void set_q(const ActionValueFunction& q);
  void set_qc(const TabularPolicy& qc);     // rows must be strictly positive
  void set_policy(const TabularPolicy& pi); // rows must be strictly positive

  const FiniteMdp& mdp() const { return mdp_; }

  /// Temperature on the kernel-update exponent; 1 keeps the exact twisted
  /// semantics, smaller values temper the importance weights.
  void set_model_twist_temperature(double t) {
    if (!(t > 0.0 && t <= 1.0))
      throw std::invalid_argument("model twist temperature must lie in (0,1]");
    twist_temp_ = t;
  }

  /// Bootstrap scale: the expected per-step survival of the discount
  /// transform. 1 keeps the undiscounted stopping-time semantics.
  void set_discount(double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0))
      throw std::invalid_argument("discount must lie in (0,1]");
    discount_ = gamma;
  }
  double discount() const { return discount_; }

  // --- checkpointing ---
  ParamLayout checkpoint_layout() const;
  std::vector<double> checkpoint_params() const;

 private:
  std::vector<double> softmax_row(const std::vector<double>& logits, long off, int n) const;
  double target_v_of(int x) const { return mdp_.is_terminal(x) ? 0.0 : discount_ * v_tgt_[x]; }
  long qd_offset(int x, int a) const { return support_offset_[x * na_ + a]; }
  int support_size(int x, int a) const { return static_cast<int>(support_[x * na_ + a].size()); }
  int support_slot(int x, int a, int next) const;

  FiniteMdp mdp_;
  int nx_ = 0;
  int na_ = 0;
  std::vector<std::vector<int>> support_;  // successor lists per (x,a)
  std::vector<long> support_offset_;       // into the jagged qd/nu vectors
  long support_total_ = 0;

  std::vector<double> pi_logits_, qc_logits_;  // nx*na
  std::vector<double> qd_logits_, nu_;         // jagged over supports
  double discount_ = 1.0;
  double twist_temp_ = 1.0;
  std::vector<double> v_, v_tgt_;              // nx
  std::vector<double> q_, q_tgt_;              // nx*na

  Adam adam_pi_, adam_qc_, adam_qd_, adam_nu_, adam_v_, adam_q_;
};

}  // namespace vmbpo
