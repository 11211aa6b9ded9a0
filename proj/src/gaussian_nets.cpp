#include "vmbpo/gaussian_nets.hpp"

#include <algorithm>
#include <cmath>

namespace vmbpo {

namespace {

constexpr double kExpClip = 20.0;
// The log-ratio head is soft-bounded: its dual objective anchors it only at
// real samples, while the critic target consumes it at synthetic ones.
constexpr double kNuBound = 3.0;

double clip_exp_arg(double z) { return std::clamp(z, -kExpClip, kExpClip); }

void check_finite(double loss, const char* what, long step) {
  if (!std::isfinite(loss)) throw NumericalError(std::string(what) + ": non-finite loss", step);
}

std::vector<double> normal_noise(int n, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> eps(n);
  for (double& e : eps) e = gauss(rng);
  return eps;
}

}  // namespace

GaussianVmbpoNets::GaussianVmbpoNets(int obs_dim, int act_dim, std::vector<int> hidden, Rng& rng)
    : obs_dim_(obs_dim),
      act_dim_(act_dim),
      pi_head_(GaussianHead::make(obs_dim, hidden, act_dim, /*squash=*/true)),
      qc_head_(GaussianHead::make(obs_dim, hidden, act_dim, /*squash=*/true)),
      qd_head_(GaussianHead::make(obs_dim + act_dim, hidden, obs_dim, /*squash=*/false)),
      nu_spec_{obs_dim + act_dim + obs_dim, hidden, 1, Activation::tanh_fn},
      v_spec_{obs_dim, hidden, 1, Activation::tanh_fn},
      q_spec_{obs_dim + act_dim, hidden, 1, Activation::tanh_fn},
      adam_pi_(pi_head_.param_count()),
      adam_qc_(qc_head_.param_count()),
      adam_qd_(qd_head_.param_count()),
      adam_nu_(nu_spec_.param_count()),
      adam_v_(v_spec_.param_count()),
      adam_q_(q_spec_.param_count()) {
  pi_head_.log_std_max = 0.25;
  qc_head_.log_std_max = 0.25;
  pi_params_ = mlp_init(pi_head_.trunk, rng);
  qc_params_ = mlp_init(qc_head_.trunk, rng);
  qd_params_ = mlp_init(qd_head_.trunk, rng);
  // kernel family: the spread stays in [e^-3, e^2] so that near-deterministic
  // systems keep finite density ratios, and it starts small because deltas are
  {
    qd_head_.log_std_min = -3.0;
    auto layout = mlp_layout(qd_head_.trunk);
    const auto& bias = layout.slices.back();  // output-layer bias
    for (int i = 0; i < obs_dim; ++i) qd_params_[bias.offset + obs_dim + i] = -2.0;
  }
  nu_params_ = mlp_init(nu_spec_, rng);
  v_params_ = mlp_init(v_spec_, rng);
  q_params_ = mlp_init(q_spec_, rng);
  v_tgt_params_ = v_params_;
  q_tgt_params_ = q_params_;
}

double GaussianVmbpoNets::nu_forward(const std::vector<double>& input, double* draw) const {
  double raw;
  mlp_forward(nu_spec_, nu_params_, input, std::span<double>(&raw, 1));
  double t = std::tanh(raw / kNuBound);
  if (draw) *draw = 1.0 - t * t;  // d(bounded)/d(raw)
  return kNuBound * t;
}

std::vector<double> GaussianVmbpoNets::concat(const Obs& a, const Act& b) const {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<double> GaussianVmbpoNets::concat(const Obs& a, const Act& b, const Obs& c) const {
  std::vector<double> out;
  out.reserve(a.size() + b.size() + c.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

double GaussianVmbpoNets::next_v_target(const Tr& t) const {
  if (t.terminal) return 0.0;  // bootstrap continues through truncation
  double v;
  mlp_forward(v_spec_, v_tgt_params_, t.next_state, std::span<double>(&v, 1));
  return discount_ * v;
}

GaussianVmbpoNets::Act GaussianVmbpoNets::act(const Obs& obs, Rng& rng) const {
  auto eps = normal_noise(act_dim_, rng);
  return gaussian_sample(pi_head_, pi_params_, obs, eps).action;
}

GaussianVmbpoNets::Act GaussianVmbpoNets::sample_action(const Obs& obs, Rng& rng) const {
  auto eps = normal_noise(act_dim_, rng);
  return gaussian_sample(qc_head_, qc_params_, obs, eps).action;
}

GaussianVmbpoNets::Obs GaussianVmbpoNets::sample_next(const Obs& obs, const Act& action,
                                                      Rng& rng) const {
  auto eps = normal_noise(obs_dim_, rng);
  auto delta = gaussian_sample(qd_head_, qd_params_, concat(obs, action), eps).action;
  Obs next(obs_dim_);
  for (int i = 0; i < obs_dim_; ++i) next[i] = obs[i] + delta[i];
  return next;
}

GaussianVmbpoNets::Tr GaussianVmbpoNets::synthesize(const Obs& obs, const RewardFn& reward,
                                                    Rng& rng, double explore_sigma) const {
  Tr t;
  t.state = obs;
  t.action = sample_action(obs, rng);
  if (explore_sigma > 0.0) {
    std::normal_distribution<double> gauss(0.0, explore_sigma);
    for (double& a : t.action) a = std::clamp(a + gauss(rng), -0.999, 0.999);
  }
  t.next_state = sample_next(obs, t.action, rng);
  t.reward = reward(obs, t.action);
  t.terminal = false;
  t.truncated = false;
  t.source = Source::synthetic;
  return t;
}

double GaussianVmbpoNets::update_dynamics(const std::vector<Tr>& batch,
                                          const std::vector<double>* weights, double eta,
                                          double lr, int steps) {
  if (batch.empty()) throw std::invalid_argument("update_dynamics: empty batch");
  const std::size_t n = batch.size();
  std::vector<std::vector<double>> inputs(n), deltas(n);
  std::vector<double> args(n);
  double shift = kNegInf;
  for (std::size_t i = 0; i < n; ++i) {
    const Tr& t = batch[i];
    inputs[i] = concat(t.state, t.action);
    deltas[i].resize(obs_dim_);
    for (int k = 0; k < obs_dim_; ++k) deltas[i][k] = t.next_state[k] - t.state[k];
    double q_tgt;
    mlp_forward(q_spec_, q_tgt_params_, inputs[i], std::span<double>(&q_tgt, 1));
    args[i] = twist_temp_ * (eta * t.reward + next_v_target(t) - q_tgt);
    shift = std::max(shift, args[i]);
  }
  std::vector<double> w(n);
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double bw = weights ? (*weights)[i] : 1.0;
    w[i] = bw * std::exp(clip_exp_arg(args[i] - shift));
    wsum += w[i];
  }

  double loss = 0.0;
  std::vector<double> grad(qd_params_.size());
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      loss -= w[i] * gaussian_log_prob(qd_head_, qd_params_, inputs[i], deltas[i]);
      gaussian_log_prob_backward(qd_head_, qd_params_, inputs[i], deltas[i], -w[i] / wsum, grad);
    }
    loss /= wsum;
    check_finite(loss, "update_dynamics", s);
    adam_qd_.step(qd_params_, grad, lr);
  }
  return loss;
}

double GaussianVmbpoNets::update_log_ratio(const std::vector<Triple>& real,
                                           const std::vector<double>* real_w,
                                           const std::vector<Triple>& synthetic,
                                           const std::vector<double>* synthetic_w, double lr,
                                           int steps) {
  if (real.empty() || synthetic.empty())
    throw std::invalid_argument("update_log_ratio: empty batch");
  std::vector<std::vector<double>> real_in(real.size()), syn_in(synthetic.size());
  for (std::size_t i = 0; i < real.size(); ++i)
    real_in[i] = concat(real[i].state, real[i].action, real[i].next);
  for (std::size_t i = 0; i < synthetic.size(); ++i)
    syn_in[i] = concat(synthetic[i].state, synthetic[i].action, synthetic[i].next);

  double loss = 0.0;
  std::vector<double> grad(nu_params_.size());
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double objective = 0.0;
    double sw = 0.0, rw = 0.0;
    for (std::size_t i = 0; i < synthetic.size(); ++i) {
      double wi = synthetic_w ? (*synthetic_w)[i] : 1.0;
      sw += wi;
    }
    for (std::size_t i = 0; i < real.size(); ++i) {
      double wi = real_w ? (*real_w)[i] : 1.0;
      rw += wi;
    }
    double norm = std::max(sw, rw);
    for (std::size_t i = 0; i < synthetic.size(); ++i) {
      double wi = synthetic_w ? (*synthetic_w)[i] : 1.0;
      double draw;
      double nu = nu_forward(syn_in[i], &draw);
      objective += wi * nu;
      double cot = -wi * draw / norm;
      mlp_backward(nu_spec_, nu_params_, syn_in[i], std::span<const double>(&cot, 1), grad);
    }
    for (std::size_t i = 0; i < real.size(); ++i) {
      double wi = real_w ? (*real_w)[i] : 1.0;
      double draw;
      double nu = nu_forward(real_in[i], &draw);
      double e = std::exp(clip_exp_arg(nu));
      objective -= wi * e;
      double cot = std::abs(nu) < kExpClip ? wi * e * draw / norm : 0.0;
      mlp_backward(nu_spec_, nu_params_, real_in[i], std::span<const double>(&cot, 1), grad);
    }
    loss = -objective / norm;
    check_finite(loss, "update_log_ratio", s);
    adam_nu_.step(nu_params_, grad, lr);
  }
  return loss;
}

double GaussianVmbpoNets::update_q(const std::vector<Tr>& batch,
                                   const std::vector<double>* weights, double eta, double lr,
                                   int steps) {
  if (batch.empty()) throw std::invalid_argument("update_q: empty batch");
  const std::size_t n = batch.size();
  std::vector<std::vector<double>> inputs(n);
  std::vector<double> targets(n);
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tr& t = batch[i];
    inputs[i] = concat(t.state, t.action);
    auto nu_in = concat(t.state, t.action, t.next_state);
    double nu = nu_forward(nu_in, nullptr);
    targets[i] = eta * t.reward + next_v_target(t) - nu;
    wsum += weights ? (*weights)[i] : 1.0;
  }
  double loss = 0.0;
  std::vector<double> grad(q_params_.size());
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double wi = weights ? (*weights)[i] : 1.0;
      double q;
      mlp_forward(q_spec_, q_params_, inputs[i], std::span<double>(&q, 1));
      double diff = q - targets[i];
      loss += wi * diff * diff;
      double cot = wi * 2.0 * diff / wsum;
      mlp_backward(q_spec_, q_params_, inputs[i], std::span<const double>(&cot, 1), grad);
    }
    loss /= wsum;
    check_finite(loss, "update_q", s);
    adam_q_.step(q_params_, grad, lr);
  }
  return loss;
}

double GaussianVmbpoNets::update_v(const std::vector<Obs>& states,
                                   const std::vector<double>* weights, double lr, int steps,
                                   Rng& rng) {
  if (states.empty()) throw std::invalid_argument("update_v: empty batch");
  const std::size_t n = states.size();
  std::vector<double> targets(n);
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto eps = normal_noise(act_dim_, rng);
    auto s = gaussian_sample(qc_head_, qc_params_, states[i], eps);
    double q;
    auto q_in = concat(states[i], s.action);
    mlp_forward(q_spec_, q_params_, q_in, std::span<double>(&q, 1));
    double log_pi = gaussian_log_prob_u(pi_head_, pi_params_, states[i], s.pre_squash);
    targets[i] = q - (s.log_prob - log_pi);
    wsum += weights ? (*weights)[i] : 1.0;
  }
  double loss = 0.0;
  std::vector<double> grad(v_params_.size());
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double wi = weights ? (*weights)[i] : 1.0;
      double v;
      mlp_forward(v_spec_, v_params_, states[i], std::span<double>(&v, 1));
      double diff = v - targets[i];
      loss += wi * diff * diff;
      double cot = wi * 2.0 * diff / wsum;
      mlp_backward(v_spec_, v_params_, states[i], std::span<const double>(&cot, 1), grad);
    }
    loss /= wsum;
    check_finite(loss, "update_v", s);
    adam_v_.step(v_params_, grad, lr);
  }
  return loss;
}

double GaussianVmbpoNets::actor_loss_at(const Obs& obs, std::span<const double> noise) const {
  auto s = gaussian_sample(qc_head_, qc_params_, obs, noise);
  double q;
  auto q_in = concat(obs, s.action);
  mlp_forward(q_spec_, q_params_, q_in, std::span<double>(&q, 1));
  double log_pi = gaussian_log_prob_u(pi_head_, pi_params_, obs, s.pre_squash);
  return s.log_prob - q - log_pi;
}

void GaussianVmbpoNets::actor_loss_backward(const Obs& obs, std::span<const double> noise,
                                            double w, std::span<double> qc_grad) const {
  auto s = gaussian_sample(qc_head_, qc_params_, obs, noise);
  // explicit-parameter part of d log q_c / dtheta (action held fixed)
  gaussian_log_prob_backward_u(qc_head_, qc_params_, obs, s.pre_squash, w, qc_grad);
  // pathwise part: cotangent on u collects every a = f(u) dependency
  auto dlogq_du = gaussian_logp_grad_u(qc_head_, qc_params_, obs, s.pre_squash);
  auto dlogpi_du = gaussian_logp_grad_u(pi_head_, pi_params_, obs, s.pre_squash);
  auto da_du = gaussian_daction_du(qc_head_, s.pre_squash);
  auto q_in = concat(obs, s.action);
  std::vector<double> q_in_grad(q_in.size(), 0.0);
  std::vector<double> q_param_scratch(q_params_.size(), 0.0);
  double cot = 1.0;
  mlp_backward(q_spec_, q_params_, q_in, std::span<const double>(&cot, 1), q_param_scratch,
               q_in_grad);
  std::vector<double> u_cot(act_dim_);
  for (int k = 0; k < act_dim_; ++k) {
    double dq_da = q_in_grad[obs_dim_ + k];
    u_cot[k] = w * (dlogq_du[k] - dq_da * da_du[k] - dlogpi_du[k]);
  }
  gaussian_path_backward_u(qc_head_, qc_params_, obs, noise, u_cot, qc_grad);
}

double GaussianVmbpoNets::update_actor(const std::vector<Obs>& states,
                                       const std::vector<double>* weights, double lr, int steps,
                                       Rng& rng) {
  if (states.empty()) throw std::invalid_argument("update_actor: empty batch");
  const std::size_t n = states.size();
  std::vector<std::vector<double>> noises(n);
  for (std::size_t i = 0; i < n; ++i) noises[i] = normal_noise(act_dim_, rng);
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) wsum += weights ? (*weights)[i] : 1.0;

  double loss = 0.0;
  std::vector<double> grad(qc_params_.size());
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double wi = weights ? (*weights)[i] : 1.0;
      loss += wi * actor_loss_at(states[i], noises[i]);
      actor_loss_backward(states[i], noises[i], wi / wsum, grad);
    }
    loss /= wsum;
    check_finite(loss, "update_actor", s);
    adam_qc_.step(qc_params_, grad, lr);
  }
  return loss;
}

void GaussianVmbpoNets::soft_target_update(double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("soft_target_update: tau in (0,1]");
  for (std::size_t i = 0; i < v_params_.size(); ++i)
    v_tgt_params_[i] = tau * v_params_[i] + (1.0 - tau) * v_tgt_params_[i];
  for (std::size_t i = 0; i < q_params_.size(); ++i)
    q_tgt_params_[i] = tau * q_params_[i] + (1.0 - tau) * q_tgt_params_[i];
}

void GaussianVmbpoNets::m_step_copy() { pi_params_ = qc_params_; }

double GaussianVmbpoNets::m_step_map(const std::vector<std::pair<Obs, Act>>& batch, double lambda,
                                     double lr, int steps) {
  if (batch.empty()) throw std::invalid_argument("m_step_map: empty batch");
  if (!(lambda >= 0.0)) throw std::invalid_argument("m_step_map: lambda must be >= 0");
  std::vector<double> old_params = pi_params_;
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  double loss = 0.0;
  std::vector<double> grad(pi_params_.size());
  std::vector<double> mu0(act_dim_), ls0(act_dim_), mu1(act_dim_), ls1(act_dim_);
  std::vector<double> mean_cot(act_dim_), ls_cot(act_dim_);
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double objective = 0.0;
    for (const auto& [x, a] : batch) {
      objective += gaussian_log_prob(pi_head_, pi_params_, x, a);
      gaussian_log_prob_backward(pi_head_, pi_params_, x, a, -inv_n, grad);
      if (lambda > 0.0) {
        gaussian_moments(pi_head_, old_params, x, mu0, ls0);
        gaussian_moments(pi_head_, pi_params_, x, mu1, ls1);
        double kl = 0.0;
        for (int k = 0; k < act_dim_; ++k) {
          double s0 = std::exp(ls0[k]), s1 = std::exp(ls1[k]);
          double dm = mu0[k] - mu1[k];
          kl += ls1[k] - ls0[k] + (s0 * s0 + dm * dm) / (2.0 * s1 * s1) - 0.5;
          mean_cot[k] = lambda * inv_n * (-dm / (s1 * s1));
          ls_cot[k] = lambda * inv_n * (1.0 - (s0 * s0 + dm * dm) / (s1 * s1));
        }
        objective -= lambda * kl;
        gaussian_moments_backward(pi_head_, pi_params_, x, mean_cot, ls_cot, grad);
      }
    }
    loss = -objective * inv_n;
    check_finite(loss, "m_step_map", s);
    adam_pi_.step(pi_params_, grad, lr);
  }
  return loss;
}

double GaussianVmbpoNets::mfe_update_q(const std::vector<Tr>& batch,
                                       const std::vector<double>* weights, double eta,
                                       double tau_exp, double lr, int steps) {
  if (batch.empty()) throw std::invalid_argument("mfe_update_q: empty batch");
  if (!(tau_exp > 0.0)) throw std::invalid_argument("mfe_update_q: tau_exp must be positive");
  const std::size_t n = batch.size();
  std::vector<std::vector<double>> inputs(n);
  std::vector<double> boot(n);
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    inputs[i] = concat(batch[i].state, batch[i].action);
    boot[i] = eta * batch[i].reward + next_v_target(batch[i]);
    wsum += weights ? (*weights)[i] : 1.0;
  }
  double loss = 0.0;
  std::vector<double> grad(q_params_.size());
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double wi = weights ? (*weights)[i] : 1.0;
      double q;
      mlp_forward(q_spec_, q_params_, inputs[i], std::span<double>(&q, 1));
      double z = tau_exp * (q - boot[i]);
      double e = std::exp(clip_exp_arg(z));
      double diff = e - 1.0;
      loss += wi * diff * diff;
      double cot = std::abs(z) < kExpClip ? wi * 2.0 * diff * e * tau_exp / wsum : 0.0;
      mlp_backward(q_spec_, q_params_, inputs[i], std::span<const double>(&cot, 1), grad);
    }
    loss /= wsum;
    check_finite(loss, "mfe_update_q", s);
    adam_q_.step(q_params_, grad, lr);
  }
  return loss;
}

double GaussianVmbpoNets::mfe_update_v(const std::vector<Obs>& states,
                                       const std::vector<double>* weights, double lr, int steps,
                                       Rng& rng) {
  return update_v(states, weights, lr, steps, rng);
}

double GaussianVmbpoNets::v_value(const Obs& obs) const {
  double v;
  mlp_forward(v_spec_, v_params_, obs, std::span<double>(&v, 1));
  return v;
}

double GaussianVmbpoNets::q_value(const Obs& obs, const Act& action) const {
  double q;
  auto q_in = concat(obs, action);
  mlp_forward(q_spec_, q_params_, q_in, std::span<double>(&q, 1));
  return q;
}

double GaussianVmbpoNets::policy_log_prob(const Obs& obs, const Act& action) const {
  return gaussian_log_prob(pi_head_, pi_params_, obs, action);
}

void GaussianVmbpoNets::policy_moments(const Obs& obs, std::span<double> mean,
                                       std::span<double> log_std) const {
  gaussian_moments(pi_head_, pi_params_, obs, mean, log_std);
}

void GaussianVmbpoNets::qc_moments(const Obs& obs, std::span<double> mean,
                                   std::span<double> log_std) const {
  gaussian_moments(qc_head_, qc_params_, obs, mean, log_std);
}

ParamLayout GaussianVmbpoNets::checkpoint_layout() const {
  ParamLayout layout;
  long off = 0;
  auto add = [&](const std::string& name, long count) {
    layout.slices.push_back({name, off, static_cast<int>(count), 1});
    off += count;
  };
  add("pi", static_cast<long>(pi_params_.size()));
  add("qc", static_cast<long>(qc_params_.size()));
  add("qd", static_cast<long>(qd_params_.size()));
  add("nu", static_cast<long>(nu_params_.size()));
  add("v", static_cast<long>(v_params_.size()));
  add("q", static_cast<long>(q_params_.size()));
  add("v_target", static_cast<long>(v_tgt_params_.size()));
  add("q_target", static_cast<long>(q_tgt_params_.size()));
  layout.total = off;
  return layout;
}

std::vector<double> GaussianVmbpoNets::checkpoint_params() const {
  std::vector<double> out;
  auto append = [&](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); };
  append(pi_params_);
  append(qc_params_);
  append(qd_params_);
  append(nu_params_);
  append(v_params_);
  append(q_params_);
  append(v_tgt_params_);
  append(q_tgt_params_);
  return out;
}

}  // namespace vmbpo
