#pragma once

#include <functional>
#include <utility>

#include "vmbpo/nets.hpp"
#include "vmbpo/replay.hpp"

namespace vmbpo {

/// The eight parameterized functions over a continuous control problem:
/// squashed-Gaussian baseline and variational policies, a diagonal-Gaussian
/// kernel over observation deltas, an unconstrained log-ratio network, and
/// scalar value/action-value networks with target copies.
class GaussianVmbpoNets {
 public:
  using Obs = std::vector<double>;
  using Act = std::vector<double>;
  using Tr = Transition<Obs, Act>;
  using RewardFn = std::function<double(const Obs&, const Act&)>;

  struct Triple {
    Obs state;
    Act action;
    Obs next;
  };

  GaussianVmbpoNets(int obs_dim, int act_dim, std::vector<int> hidden, Rng& rng);

  // --- interaction ---
  Act act(const Obs& obs, Rng& rng) const;            // a ~ pi
  Act sample_action(const Obs& obs, Rng& rng) const;  // a ~ q_c
  Obs sample_next(const Obs& obs, const Act& action, Rng& rng) const;
  // explore_sigma adds clipped Gaussian noise to the drawn action, widening
  // the regression coverage; the targets stay pointwise-valid off-policy.
  Tr synthesize(const Obs& obs, const RewardFn& reward, Rng& rng,
                double explore_sigma = 0.0) const;

  // --- sampled updates; each takes `steps` adaptive-moment steps ---
  double update_dynamics(const std::vector<Tr>& batch, const std::vector<double>* weights,
                         double eta, double lr, int steps);
  double update_log_ratio(const std::vector<Triple>& real, const std::vector<double>* real_w,
                          const std::vector<Triple>& synthetic,
                          const std::vector<double>* synthetic_w, double lr, int steps);
  double update_q(const std::vector<Tr>& batch, const std::vector<double>* weights, double eta,
                  double lr, int steps);
  double update_v(const std::vector<Obs>& states, const std::vector<double>* weights, double lr,
                  int steps, Rng& rng);
  double update_actor(const std::vector<Obs>& states, const std::vector<double>* weights,
                      double lr, int steps, Rng& rng);
  void soft_target_update(double tau);
  void m_step_copy();
  double m_step_map(const std::vector<std::pair<Obs, Act>>& batch, double lambda, double lr,
                    int steps);
  double mfe_update_q(const std::vector<Tr>& batch, const std::vector<double>* weights, double eta,
                      double tau_exp, double lr, int steps);
  double mfe_update_v(const std::vector<Obs>& states, const std::vector<double>* weights,
                      double lr, int steps, Rng& rng);

  // --- evaluation helpers ---
  double v_value(const Obs& obs) const;
  double q_value(const Obs& obs, const Act& action) const;
  double policy_log_prob(const Obs& obs, const Act& action) const;
  void policy_moments(const Obs& obs, std::span<double> mean, std::span<double> log_std) const;
  void qc_moments(const Obs& obs, std::span<double> mean, std::span<double> log_std) const;

  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }

  /// Temperature on the kernel-update exponent (1 = exact twisted weights).
  void set_model_twist_temperature(double t) {
    if (!(t > 0.0 && t <= 1.0))
      throw std::invalid_argument("model twist temperature must lie in (0,1]");
    twist_temp_ = t;
  }

  /// Bootstrap scale (expected survival of the discount transform).
  void set_discount(double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0))
      throw std::invalid_argument("discount must lie in (0,1]");
    discount_ = gamma;
  }
  double discount() const { return discount_; }

  // --- checkpointing ---
  ParamLayout checkpoint_layout() const;
  std::vector<double> checkpoint_params() const;

  // exposed for gradient-integrity tests
  const GaussianHead& qc_head() const { return qc_head_; }
  std::span<const double> qc_params() const { return qc_params_; }
  std::span<double> qc_params_mut() { return qc_params_; }
  const MlpSpec& q_spec() const { return q_spec_; }
  std::span<const double> q_params() const { return q_params_; }
  double actor_loss_at(const Obs& obs, std::span<const double> noise) const;
  void actor_loss_backward(const Obs& obs, std::span<const double> noise, double w,
                           std::span<double> qc_grad) const;

 private:
  double nu_forward(const std::vector<double>& input, double* draw) const;
  std::vector<double> concat(const Obs& a, const Act& b) const;
  std::vector<double> concat(const Obs& a, const Act& b, const Obs& c) const;
  double next_v_target(const Tr& t) const;

  int obs_dim_;
  int act_dim_;
  double discount_ = 1.0;
  double twist_temp_ = 1.0;

  GaussianHead pi_head_, qc_head_, qd_head_;
  MlpSpec nu_spec_, v_spec_, q_spec_;

  std::vector<double> pi_params_, qc_params_, qd_params_, nu_params_;
  std::vector<double> v_params_, q_params_, v_tgt_params_, q_tgt_params_;

  Adam adam_pi_, adam_qc_, adam_qd_, adam_nu_, adam_v_, adam_q_;
};

}  // namespace vmbpo
