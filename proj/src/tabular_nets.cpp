#include "vmbpo/tabular_nets.hpp"

#include <algorithm>
#include <cmath>

namespace vmbpo {

namespace {

constexpr double kExpClip = 20.0;

double clip_exp_arg(double z) { return std::clamp(z, -kExpClip, kExpClip); }

void check_finite(double loss, const char* what, long step) {
  if (!std::isfinite(loss)) throw NumericalError(std::string(what) + ": non-finite loss", step);
}

}  // namespace

TabularVmbpoNets::TabularVmbpoNets(const FiniteMdp& mdp)
    : mdp_(mdp),
      nx_(mdp.num_states()),
      na_(mdp.num_actions()),
      adam_pi_(static_cast<long>(mdp.num_states()) * mdp.num_actions()),
      adam_qc_(static_cast<long>(mdp.num_states()) * mdp.num_actions()),
      adam_qd_(0),
      adam_nu_(0),
      adam_v_(mdp.num_states()),
      adam_q_(static_cast<long>(mdp.num_states()) * mdp.num_actions()) {
  require_valid(mdp_);
  support_.resize(static_cast<std::size_t>(nx_) * na_);
  support_offset_.assign(static_cast<std::size_t>(nx_) * na_, 0);
  long off = 0;
  for (int x = 0; x < nx_; ++x)
    for (int a = 0; a < na_; ++a) {
      auto& sup = support_[x * na_ + a];
      if (!mdp_.is_terminal(x))
        for (int y = 0; y < nx_; ++y)
          if (mdp_.transition[x][a][y] > 0.0) sup.push_back(y);
      support_offset_[x * na_ + a] = off;
      off += static_cast<long>(sup.size());
    }
  support_total_ = off;

  pi_logits_.assign(static_cast<std::size_t>(nx_) * na_, 0.0);
  qc_logits_.assign(static_cast<std::size_t>(nx_) * na_, 0.0);
  qd_logits_.assign(support_total_, 0.0);
  nu_.assign(support_total_, 0.0);
  v_.assign(nx_, 0.0);
  v_tgt_.assign(nx_, 0.0);
  q_.assign(static_cast<std::size_t>(nx_) * na_, 0.0);
  q_tgt_.assign(static_cast<std::size_t>(nx_) * na_, 0.0);
  adam_qd_ = Adam(support_total_);
  adam_nu_ = Adam(support_total_);
}

int TabularVmbpoNets::support_slot(int x, int a, int next) const {
  const auto& sup = support_[x * na_ + a];
  for (int k = 0; k < static_cast<int>(sup.size()); ++k)
    if (sup[k] == next) return k;
  throw SupportError("transition outside the kernel support at (" + mdp_.states[x] + "," +
                     mdp_.actions[a] + ") -> " + mdp_.states[next]);
}

std::vector<double> TabularVmbpoNets::softmax_row(const std::vector<double>& logits, long off,
                                                  int n) const {
  std::vector<double> p(n);
  double m = kNegInf;
  for (int i = 0; i < n; ++i) m = std::max(m, logits[off + i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    p[i] = std::exp(logits[off + i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

int TabularVmbpoNets::act(int x, Rng& rng) const {
  auto p = softmax_row(pi_logits_, static_cast<long>(x) * na_, na_);
  return sample_categorical(p, rng);
}

int TabularVmbpoNets::sample_action(int x, Rng& rng) const {
  auto p = softmax_row(qc_logits_, static_cast<long>(x) * na_, na_);
  return sample_categorical(p, rng);
}

int TabularVmbpoNets::sample_next(int x, int a, Rng& rng) const {
  const auto& sup = support_[x * na_ + a];
  if (sup.empty()) throw std::invalid_argument("sample_next from a terminal state");
  auto p = softmax_row(qd_logits_, qd_offset(x, a), static_cast<int>(sup.size()));
  return sup[sample_categorical(p, rng)];
}

TabularVmbpoNets::Tr TabularVmbpoNets::synthesize(int x, const RewardFn& reward, Rng& rng,
                                                  double explore_sigma) const {
  (void)explore_sigma;  // softmax rows keep full support without extra noise
  Tr t;
  t.state = x;
  t.action = sample_action(x, rng);
  t.next_state = sample_next(x, t.action, rng);
  t.reward = reward(x, t.action);
  t.terminal = mdp_.is_terminal(t.next_state);
  t.truncated = false;
  t.source = Source::synthetic;
  return t;
}

double TabularVmbpoNets::nu_value(int x, int a, int next) const {
  return nu_[qd_offset(x, a) + support_slot(x, a, next)];
}

double TabularVmbpoNets::update_dynamics(const std::vector<Tr>& batch,
                                         const std::vector<double>* weights, double eta, double lr,
                                         int steps) {
  if (batch.empty()) throw std::invalid_argument("update_dynamics: empty batch");
  // exp arguments are max-shifted per batch (the weighted-likelihood maximizer
  // is invariant to a common factor), then clipped
  std::vector<double> args(batch.size());
  double shift = kNegInf;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tr& t = batch[i];
    args[i] = twist_temp_ * (eta * t.reward + target_v_of(t.next_state) -
                             q_tgt_[t.state * na_ + t.action]);
    shift = std::max(shift, args[i]);
  }
  std::vector<double> w(batch.size());
  double wsum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double bw = weights ? (*weights)[i] : 1.0;
    w[i] = bw * std::exp(clip_exp_arg(args[i] - shift));
    wsum += w[i];
  }

  double loss = 0.0;
  std::vector<double> grad(qd_logits_.size());
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Tr& t = batch[i];
      long off = qd_offset(t.state, t.action);
      int n = support_size(t.state, t.action);
      auto p = softmax_row(qd_logits_, off, n);
      int slot = support_slot(t.state, t.action, t.next_state);
      loss -= w[i] * std::log(std::max(p[slot], 1e-300));
      for (int k = 0; k < n; ++k)
        grad[off + k] -= w[i] * ((k == slot ? 1.0 : 0.0) - p[k]);
    }
    loss /= wsum;
    for (double& g : grad) g /= wsum;
    check_finite(loss, "update_dynamics", s);
    adam_qd_.step(qd_logits_, grad, lr);
  }
  return loss;
}

double TabularVmbpoNets::update_log_ratio(const std::vector<Triple>& real,
                                          const std::vector<double>* real_w,
                                          const std::vector<Triple>& synthetic,
                                          const std::vector<double>* synthetic_w, double lr,
                                          int steps) {
  if (real.empty() || synthetic.empty())
    throw std::invalid_argument("update_log_ratio: empty batch");
  double loss = 0.0;
  std::vector<double> grad(nu_.size());
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double objective = 0.0;
    double sw = 0.0, rw = 0.0;
    for (std::size_t i = 0; i < synthetic.size(); ++i) {
      const Triple& t = synthetic[i];
      double wi = synthetic_w ? (*synthetic_w)[i] : 1.0;
      long idx = qd_offset(t.state, t.action) + support_slot(t.state, t.action, t.next);
      objective += wi * nu_[idx];
      grad[idx] -= wi;  // gradient of the (minimized) negative objective
      sw += wi;
    }
    for (std::size_t i = 0; i < real.size(); ++i) {
      const Triple& t = real[i];
      double wi = real_w ? (*real_w)[i] : 1.0;
      long idx = qd_offset(t.state, t.action) + support_slot(t.state, t.action, t.next);
      double z = nu_[idx];
      double e = std::exp(clip_exp_arg(z));
      objective -= wi * e;
      if (std::abs(z) < kExpClip) grad[idx] += wi * e;
      rw += wi;
    }
    double norm = std::max(sw, rw);
    loss = -objective / norm;
    for (double& g : grad) g /= norm;
    check_finite(loss, "update_log_ratio", s);
    adam_nu_.step(nu_, grad, lr);
  }
  return loss;
}

double TabularVmbpoNets::update_q(const std::vector<Tr>& batch, const std::vector<double>* weights,
                                  double eta, double lr, int steps) {
  if (batch.empty()) throw std::invalid_argument("update_q: empty batch");
  double loss = 0.0;
  std::vector<double> grad(q_.size());
  double wsum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) wsum += weights ? (*weights)[i] : 1.0;
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Tr& t = batch[i];
      double wi = weights ? (*weights)[i] : 1.0;
      double target = eta * t.reward + target_v_of(t.next_state) -
                      nu_value(t.state, t.action, t.next_state);
      double diff = q_[t.state * na_ + t.action] - target;
      loss += wi * diff * diff;
      grad[t.state * na_ + t.action] += wi * 2.0 * diff;
    }
    loss /= wsum;
    for (double& g : grad) g /= wsum;
    check_finite(loss, "update_q", s);
    adam_q_.step(q_, grad, lr);
  }
  return loss;
}

double TabularVmbpoNets::update_v(const std::vector<int>& states,
                                  const std::vector<double>* weights, double lr, int steps,
                                  Rng& rng) {
  (void)rng;  // the tabular head takes the exact action expectation
  if (states.empty()) throw std::invalid_argument("update_v: empty batch");
  double loss = 0.0;
  std::vector<double> grad(v_.size());
  double wsum = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) wsum += weights ? (*weights)[i] : 1.0;
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
      int x = states[i];
      if (mdp_.is_terminal(x)) continue;
      double wi = weights ? (*weights)[i] : 1.0;
      auto qc = softmax_row(qc_logits_, static_cast<long>(x) * na_, na_);
      auto pi = softmax_row(pi_logits_, static_cast<long>(x) * na_, na_);
      double target = 0.0;
      for (int a = 0; a < na_; ++a) {
        if (qc[a] <= 0.0) continue;
        target += qc[a] * (q_[x * na_ + a] - std::log(qc[a] / pi[a]));
      }
      double diff = v_[x] - target;
      loss += wi * diff * diff;
      grad[x] += wi * 2.0 * diff;
    }
    loss /= wsum;
    for (double& g : grad) g /= wsum;
    check_finite(loss, "update_v", s);
    adam_v_.step(v_, grad, lr);
  }
  return loss;
}

double TabularVmbpoNets::update_actor(const std::vector<int>& states,
                                      const std::vector<double>* weights, double lr, int steps,
                                      Rng& rng) {
  (void)rng;  // exact per-state gradient
  if (states.empty()) throw std::invalid_argument("update_actor: empty batch");
  double loss = 0.0;
  std::vector<double> grad(qc_logits_.size());
  double wsum = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) wsum += weights ? (*weights)[i] : 1.0;
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
      int x = states[i];
      if (mdp_.is_terminal(x)) continue;
      double wi = weights ? (*weights)[i] : 1.0;
      auto qc = softmax_row(qc_logits_, static_cast<long>(x) * na_, na_);
      auto pi = softmax_row(pi_logits_, static_cast<long>(x) * na_, na_);
      // L(x) = E_qc[log qc - log pi - Q]; dL/dlogit_b = qc_b (g_b - E_qc[g])
      std::vector<double> gvec(na_);
      double mean_g = 0.0, l = 0.0;
      for (int a = 0; a < na_; ++a) {
        gvec[a] = std::log(std::max(qc[a], 1e-300)) - std::log(std::max(pi[a], 1e-300)) -
                  q_[x * na_ + a];
        mean_g += qc[a] * gvec[a];
      }
      l = mean_g;
      for (int a = 0; a < na_; ++a)
        grad[x * na_ + a] += wi * qc[a] * (gvec[a] - mean_g);
      loss += wi * l;
    }
    loss /= wsum;
    for (double& g : grad) g /= wsum;
    check_finite(loss, "update_actor", s);
    adam_qc_.step(qc_logits_, grad, lr);
  }
  return loss;
}

void TabularVmbpoNets::soft_target_update(double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("soft_target_update: tau in (0,1]");
  for (int x = 0; x < nx_; ++x) v_tgt_[x] = tau * v_[x] + (1.0 - tau) * v_tgt_[x];
  for (std::size_t i = 0; i < q_.size(); ++i) q_tgt_[i] = tau * q_[i] + (1.0 - tau) * q_tgt_[i];
}

void TabularVmbpoNets::m_step_copy() { pi_logits_ = qc_logits_; }

double TabularVmbpoNets::m_step_map(const std::vector<std::pair<int, int>>& batch, double lambda,
                                    double lr, int steps) {
  if (batch.empty()) throw std::invalid_argument("m_step_map: empty batch");
  if (!(lambda >= 0.0)) throw std::invalid_argument("m_step_map: lambda must be >= 0");
  std::vector<double> old_logits = pi_logits_;
  double loss = 0.0;
  std::vector<double> grad(pi_logits_.size());
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double objective = 0.0;
    for (const auto& [x, a] : batch) {
      auto pi = softmax_row(pi_logits_, static_cast<long>(x) * na_, na_);
      auto pi_old = softmax_row(old_logits, static_cast<long>(x) * na_, na_);
      objective += std::log(std::max(pi[a], 1e-300));
      double kl = 0.0;
      for (int b = 0; b < na_; ++b)
        if (pi_old[b] > 0.0) kl += pi_old[b] * std::log(pi_old[b] / std::max(pi[b], 1e-300));
      objective -= lambda * kl;
      for (int b = 0; b < na_; ++b) {
        double g = ((b == a ? 1.0 : 0.0) - pi[b]) - lambda * (pi[b] - pi_old[b]);
        grad[x * na_ + b] -= g;  // minimize the negative objective
      }
    }
    loss = -objective / static_cast<double>(batch.size());
    for (double& g : grad) g /= static_cast<double>(batch.size());
    check_finite(loss, "m_step_map", s);
    adam_pi_.step(pi_logits_, grad, lr);
  }
  return loss;
}

double TabularVmbpoNets::mfe_update_q(const std::vector<Tr>& batch,
                                      const std::vector<double>* weights, double eta,
                                      double tau_exp, double lr, int steps) {
  if (batch.empty()) throw std::invalid_argument("mfe_update_q: empty batch");
  if (!(tau_exp > 0.0)) throw std::invalid_argument("mfe_update_q: tau_exp must be positive");
  double loss = 0.0;
  std::vector<double> grad(q_.size());
  double wsum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) wsum += weights ? (*weights)[i] : 1.0;
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Tr& t = batch[i];
      double wi = weights ? (*weights)[i] : 1.0;
      double z = tau_exp * (q_[t.state * na_ + t.action] - eta * t.reward -
                            target_v_of(t.next_state));
      double e = std::exp(clip_exp_arg(z));
      double diff = e - 1.0;
      loss += wi * diff * diff;
      if (std::abs(z) < kExpClip)
        grad[t.state * na_ + t.action] += wi * 2.0 * diff * e * tau_exp;
    }
    loss /= wsum;
    for (double& g : grad) g /= wsum;
    check_finite(loss, "mfe_update_q", s);
    adam_q_.step(q_, grad, lr);
  }
  return loss;
}

double TabularVmbpoNets::mfe_update_v(const std::vector<int>& states,
                                      const std::vector<double>* weights, double lr, int steps,
                                      Rng& rng) {
  return update_v(states, weights, lr, steps, rng);
}

TabularPolicy TabularVmbpoNets::policy_table() const {
  TabularPolicy out = TabularPolicy::uniform(nx_, na_);
  for (int x = 0; x < nx_; ++x)
    if (!mdp_.is_terminal(x)) out.probs[x] = softmax_row(pi_logits_, static_cast<long>(x) * na_, na_);
  return out;
}

TabularPolicy TabularVmbpoNets::qc_table() const {
  TabularPolicy out = TabularPolicy::uniform(nx_, na_);
  for (int x = 0; x < nx_; ++x)
    if (!mdp_.is_terminal(x)) out.probs[x] = softmax_row(qc_logits_, static_cast<long>(x) * na_, na_);
  return out;
}

TabularDynamics TabularVmbpoNets::qd_table() const {
  TabularDynamics out{mdp_.transition};
  for (int x = 0; x < nx_; ++x) {
    if (mdp_.is_terminal(x)) continue;
    for (int a = 0; a < na_; ++a) {
      const auto& sup = support_[x * na_ + a];
      auto p = softmax_row(qd_logits_, qd_offset(x, a), static_cast<int>(sup.size()));
      std::fill(out.probs[x][a].begin(), out.probs[x][a].end(), 0.0);
      for (std::size_t k = 0; k < sup.size(); ++k) out.probs[x][a][sup[k]] = p[k];
    }
  }
  return out;
}

void TabularVmbpoNets::set_v_target(const ValueFunction& v) {
  for (int x = 0; x < nx_; ++x) v_tgt_[x] = mdp_.is_terminal(x) ? 0.0 : v.v[x];
}

void TabularVmbpoNets::set_q_target(const ActionValueFunction& q) {
  for (int x = 0; x < nx_; ++x)
    for (int a = 0; a < na_; ++a) q_tgt_[x * na_ + a] = q.q[x][a];
}

void TabularVmbpoNets::set_q(const ActionValueFunction& q) {
  for (int x = 0; x < nx_; ++x)
    for (int a = 0; a < na_; ++a) q_[x * na_ + a] = q.q[x][a];
}

void TabularVmbpoNets::set_qc(const TabularPolicy& qc) {
  for (int x = 0; x < nx_; ++x)
    for (int a = 0; a < na_; ++a) {
      double p = qc.probs[x][a];
      if (!(p > 0.0)) throw std::invalid_argument("set_qc: rows must be strictly positive");
      qc_logits_[x * na_ + a] = std::log(p);
    }
}

void TabularVmbpoNets::set_policy(const TabularPolicy& pi) {
  for (int x = 0; x < nx_; ++x)
    for (int a = 0; a < na_; ++a) {
      double p = pi.probs[x][a];
      if (!(p > 0.0)) throw std::invalid_argument("set_policy: rows must be strictly positive");
      pi_logits_[x * na_ + a] = std::log(p);
    }
}

ParamLayout TabularVmbpoNets::checkpoint_layout() const {
  ParamLayout layout;
  long off = 0;
  auto add = [&](const std::string& name, int rows, int cols) {
    layout.slices.push_back({name, off, rows, cols});
    off += static_cast<long>(rows) * cols;
  };
  add("pi_logits", nx_, na_);
  add("qc_logits", nx_, na_);
  add("qd_logits", static_cast<int>(support_total_), 1);
  add("nu", static_cast<int>(support_total_), 1);
  add("v", nx_, 1);
  add("q", nx_, na_);
  add("v_target", nx_, 1);
  add("q_target", nx_, na_);
  layout.total = off;
  return layout;
}

std::vector<double> TabularVmbpoNets::checkpoint_params() const {
  std::vector<double> out;
  out.reserve(checkpoint_layout().total);
  auto append = [&](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); };
  append(pi_logits_);
  append(qc_logits_);
  append(qd_logits_);
  append(nu_);
  append(v_);
  append(q_);
  append(v_tgt_);
  append(q_tgt_);
  return out;
}

}  // namespace vmbpo
