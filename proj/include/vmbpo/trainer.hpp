#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>

#include "vmbpo/envs.hpp"
#include "vmbpo/replay.hpp"
#include "vmbpo/variational.hpp"

namespace vmbpo {

enum class MStepMode { copy, map };

struct TrainConfig {
  long total_steps = 20000;
  int collect_per_round = 250;  // environment interactions per outer round
  int e_step_iters = 20;        // inner iterations per round (K)
  int batch_ac = 64;
  int batch_model = 256;
  int synthetic_per_iter = 256;  // synthetic transitions generated per inner iteration
  double lr_model = 3e-4;
  double lr_critic = 5e-4;
  double lr_actor = 2e-4;
  double tau = 0.005;
  double eta = 1.0;
  double discount = 0.99;
  double lambda = 0.0;
  MStepMode m_step_mode = MStepMode::copy;
  int grad_steps_model = 1;   // kernel and log-ratio steps per inner iteration
  int grad_steps_critic = 1;  // value/action-value steps per inner iteration
  int grad_steps_actor = 1;   // variational-policy steps per inner iteration
  long eval_interval = 1000;
  int eval_episodes = 5;
  std::size_t buffer_capacity = 1'000'000;
  double tau_exp = 1.0;  // exponential-TD temperature (model-free E-step)
  double model_twist_temp = 1.0;  // temperature on the kernel-update exponent
  int smoothing_window = 3;
  int episode_cap = 500;  // tabular rollout cap
  // additive collection-time exploration noise (continuous actions only)
  double explore_sigma = 1.0;
  double explore_decay = 0.999;  // per environment step
  double explore_min = 0.025;

  void require_valid() const {
    if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
    if (collect_per_round <= 0) throw std::invalid_argument("collect_per_round must be positive");
    if (e_step_iters <= 0) throw std::invalid_argument("e_step_iters must be positive");
    if (batch_ac <= 0 || batch_model <= 0) throw std::invalid_argument("batch sizes must be positive");
    if (synthetic_per_iter != 128 && synthetic_per_iter != 256 && synthetic_per_iter != 512)
      throw std::invalid_argument("synthetic_per_iter must be one of {128, 256, 512}");
    if (!(lr_model > 0.0 && lr_critic > 0.0 && lr_actor > 0.0))
      throw std::invalid_argument("learning rates must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in (0,1]");
    if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
    if (!(discount > 0.0 && discount <= 1.0))
      throw std::invalid_argument("discount must lie in (0,1]");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (!(tau_exp > 0.0)) throw std::invalid_argument("tau_exp must be positive");
    if (!(model_twist_temp > 0.0 && model_twist_temp <= 1.0))
      throw std::invalid_argument("model_twist_temp must lie in (0,1]");
    if (grad_steps_model <= 0 || grad_steps_critic <= 0 || grad_steps_actor <= 0)
      throw std::invalid_argument("gradient step counts must be positive");
    if (eval_interval <= 0 || eval_episodes <= 0)
      throw std::invalid_argument("evaluation settings must be positive");
  }
};

struct MetricsRow {
  long wall_step = 0;  // cumulative inner update iterations
  long env_steps = 0;
  double mean_return = 0.0;
  double return_sd = 0.0;
  double elbo_estimate = std::numeric_limits<double>::quiet_NaN();
  double loss_dynamics = std::numeric_limits<double>::quiet_NaN();
  double loss_nu = std::numeric_limits<double>::quiet_NaN();
  double loss_q = std::numeric_limits<double>::quiet_NaN();
  double loss_v = std::numeric_limits<double>::quiet_NaN();
  double loss_actor = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<MetricsRow> rows;  // rows.front() is the pre-training evaluation
  double final_smoothed_return = 0.0;
};

/// Called once per emitted evaluation row (the pre-training row included).
using MetricsSink = std::function<void(const MetricsRow&)>;

/// Finite-MDP adapter with the usual reset/step surface and known rewards.
class TabularTrainEnv {
 public:
  using Obs = int;
  using Act = int;
  struct Step {
    int next;
    double reward;
    bool terminal;
    bool truncated;
  };

  explicit TabularTrainEnv(FiniteMdp mdp, int episode_cap = 500)
      : mdp_(std::move(mdp)), cap_(episode_cap) {
    require_valid(mdp_);
  }

  int reset(Rng& rng) {
    steps_ = 0;
    do {
      state_ = sample_categorical(mdp_.initial, rng);
    } while (mdp_.is_terminal(state_));
    return state_;
  }

  Step step(int action, Rng& rng) {
    int x = state_;
    double r = mdp_.reward[x][action];
    int next = sample_categorical(mdp_.transition[x][action], rng);
    state_ = next;
    ++steps_;
    bool terminal = mdp_.is_terminal(next);
    bool truncated = !terminal && steps_ >= cap_;
    return {next, r, terminal, truncated};
  }

  double reward(int x, int a) const { return mdp_.reward[x][a]; }
  const FiniteMdp& mdp() const { return mdp_; }

 private:
  FiniteMdp mdp_;
  int cap_;
  int state_ = 0;
  int steps_ = 0;
};

/// Pendulum adapter: agent actions live in (-1,1) and scale to the torque
/// bound; rewards are the known cost on (observation, action).
class PendulumTrainEnv {
 public:
  using Obs = std::vector<double>;
  using Act = std::vector<double>;
  struct Step {
    Obs next;
    double reward;
    bool terminal;
    bool truncated;
  };

  Obs reset(Rng& rng) {
    auto o = env_.reset(rng);
    return {o[0], o[1], o[2]};
  }

  Step step(const Act& action, Rng& rng) {
    (void)rng;  // deterministic dynamics
    auto r = env_.step(torque_of(action));
    return {{r.obs[0], r.obs[1], r.obs[2]}, r.reward, r.terminal, r.truncated};
  }

  double reward(const Obs& obs, const Act& action) const {
    return PendulumEnv::reward({obs[0], obs[1], obs[2]}, torque_of(action));
  }

  static constexpr int kObsDim = PendulumEnv::kObsDim;
  static constexpr int kActDim = PendulumEnv::kActDim;

 private:
  static double torque_of(const Act& action) {
    return PendulumEnv::kMaxTorque * std::clamp(action[0], -1.0, 1.0);
  }
  PendulumEnv env_;
};

/// Streams baseline-policy experience into a real-transition buffer,
/// carrying episode state across calls; resets on termination or truncation.
template <class Env, class Nets>
class Collector {
 public:
  using Obs = typename Nets::Obs;
  using Act = typename Nets::Act;

  explicit Collector(Env& env) : env_(&env) {}

  void run(const Nets& nets, ReplayBuffer<Obs, Act>& buffer, long n, Rng& rng,
           double explore_sigma = 0.0) {
    for (long i = 0; i < n; ++i) {
      if (need_reset_) {
        obs_ = env_->reset(rng);
        need_reset_ = false;
      }
      Act a = nets.act(obs_, rng);
      if constexpr (!std::is_same_v<Act, int>) {
        if (explore_sigma > 0.0) {
          std::normal_distribution<double> gauss(0.0, explore_sigma);
          for (double& ai : a) ai = std::clamp(ai + gauss(rng), -0.999, 0.999);
        }
      }
      auto s = env_->step(a, rng);
      Transition<Obs, Act> t;
      t.state = obs_;
      t.action = a;
      t.reward = s.reward;
      t.next_state = s.next;
      t.terminal = s.terminal;
      t.truncated = s.truncated;
      t.source = Source::real;
      buffer.push(std::move(t));
      if (s.terminal || s.truncated)
        need_reset_ = true;
      else
        obs_ = s.next;
    }
  }

 private:
  Env* env_;
  Obs obs_{};
  bool need_reset_ = true;
};

namespace detail {

template <class Env, class Nets>
std::pair<double, double> evaluate_policy(const Env& env_proto, const Nets& nets, int episodes,
                                          int episode_cap, Rng& rng) {
  Env env = env_proto;  // episodes run on a copy; training episode state stays put
  std::vector<double> returns;
  returns.reserve(episodes);
  for (int e = 0; e < episodes; ++e) {
    auto obs = env.reset(rng);
    double total = 0.0;
    for (int t = 0; t < episode_cap; ++t) {
      auto a = nets.act(obs, rng);
      auto s = env.step(a, rng);
      total += s.reward;
      if (s.terminal || s.truncated) break;
      obs = s.next;
    }
    returns.push_back(total);
  }
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= returns.size();
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  var /= returns.size();
  return {mean, std::sqrt(var)};
}

template <class Env, class Nets>
double elbo_estimate(const Env& env, const Nets& nets, double eta) {
  if constexpr (requires { nets.qc_table(); env.mdp(); }) {
    try {
      return elbo_linear(env.mdp(), Temperature(eta), nets.qc_table(), nets.qd_table(),
                         nets.policy_table());
    } catch (const std::exception&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  } else {
    (void)env;
    (void)nets;
    (void)eta;
    return std::numeric_limits<double>::quiet_NaN();
  }
}

template <class Env, class Nets>
TrainResult run_training(Env& env, Nets& nets, const TrainConfig& cfg, std::uint64_t seed,
                         bool model_free_e_step, const MetricsSink& sink) {
  cfg.require_valid();
  using Obs = typename Nets::Obs;
  using Act = typename Nets::Act;
  using Triple = typename Nets::Triple;

  Rng rng(seed);
  nets.set_discount(cfg.discount);
  nets.set_model_twist_temperature(cfg.model_twist_temp);
  ReplayBuffer<Obs, Act> real(cfg.buffer_capacity, Source::real);
  ReplayBuffer<Obs, Act> synthetic(cfg.buffer_capacity, Source::synthetic);
  auto reward_fn = [&env](const Obs& x, const Act& a) { return env.reward(x, a); };

  TrainResult result;
  long env_steps = 0;
  long wall_step = 0;
  long next_eval = cfg.eval_interval;
  int eval_count = 0;
  MetricsRow losses;  // latest loss values

  auto emit_eval = [&]() {
    Rng eval_rng(seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(eval_count + 1));
    auto [mean, sd] =
        evaluate_policy(env, nets, cfg.eval_episodes, cfg.episode_cap, eval_rng);
    MetricsRow row = losses;
    row.wall_step = wall_step;
    row.env_steps = env_steps;
    row.mean_return = mean;
    row.return_sd = sd;
    row.elbo_estimate = elbo_estimate(env, nets, cfg.eta);
    result.rows.push_back(row);
    if (sink) sink(row);
    ++eval_count;
  };

  emit_eval();  // pre-training reference point

  Collector<Env, Nets> collector(env);
  double sigma = cfg.explore_sigma;
  while (env_steps < cfg.total_steps) {
    long n = std::min<long>(cfg.collect_per_round, cfg.total_steps - env_steps);
    sigma = std::max(cfg.explore_min,
                     cfg.explore_sigma *
                         std::pow(cfg.explore_decay, static_cast<double>(env_steps)));
    collector.run(nets, real, n, rng, sigma);
    env_steps += n;

    if (real.size() >= static_cast<std::size_t>(std::max(cfg.batch_model, cfg.batch_ac))) {
      for (int k = 0; k < cfg.e_step_iters; ++k) {
        if (!model_free_e_step) {
          auto model_batch = real.sample_batch(cfg.batch_model, rng);
          losses.loss_dynamics = nets.update_dynamics(model_batch, nullptr, cfg.eta,
                                                       cfg.lr_model, cfg.grad_steps_model);

          auto ratio_batch = real.sample_batch(cfg.batch_ac, rng);
          std::vector<Triple> real_triples, syn_triples;
          real_triples.reserve(ratio_batch.size());
          syn_triples.reserve(ratio_batch.size());
          for (const auto& t : ratio_batch) {
            real_triples.push_back({t.state, t.action, t.next_state});
            syn_triples.push_back({t.state, t.action, nets.sample_next(t.state, t.action, rng)});
          }
          losses.loss_nu = nets.update_log_ratio(real_triples, nullptr, syn_triples, nullptr,
                                                 cfg.lr_model, cfg.grad_steps_model);

          for (int i = 0; i < cfg.synthetic_per_iter; ++i) {
            const auto& seed_tr = real.sample(rng);
            synthetic.push(nets.synthesize(seed_tr.state, reward_fn, rng, sigma));
          }
          auto q_batch = synthetic.sample_batch(cfg.batch_ac, rng);
          losses.loss_q =
              nets.update_q(q_batch, nullptr, cfg.eta, cfg.lr_critic, cfg.grad_steps_critic);

          auto v_batch = synthetic.sample_batch(cfg.batch_ac, rng);
          std::vector<Obs> v_states;
          v_states.reserve(v_batch.size());
          for (const auto& t : v_batch) v_states.push_back(t.state);
          losses.loss_v =
              nets.update_v(v_states, nullptr, cfg.lr_critic, cfg.grad_steps_critic, rng);

          auto a_batch = synthetic.sample_batch(cfg.batch_ac, rng);
          std::vector<Obs> a_states;
          a_states.reserve(a_batch.size());
          for (const auto& t : a_batch) a_states.push_back(t.state);
          losses.loss_actor =
              nets.update_actor(a_states, nullptr, cfg.lr_actor, cfg.grad_steps_actor, rng);
        } else {
          auto q_batch = real.sample_batch(cfg.batch_ac, rng);
          losses.loss_q = nets.mfe_update_q(q_batch, nullptr, cfg.eta, cfg.tau_exp,
                                            cfg.lr_critic, cfg.grad_steps_critic);
          auto v_batch = real.sample_batch(cfg.batch_ac, rng);
          std::vector<Obs> v_states;
          v_states.reserve(v_batch.size());
          for (const auto& t : v_batch) v_states.push_back(t.state);
          losses.loss_v =
              nets.mfe_update_v(v_states, nullptr, cfg.lr_critic, cfg.grad_steps_critic, rng);

          auto a_batch = real.sample_batch(cfg.batch_ac, rng);
          std::vector<Obs> a_states;
          a_states.reserve(a_batch.size());
          for (const auto& t : a_batch) a_states.push_back(t.state);
          losses.loss_actor =
              nets.update_actor(a_states, nullptr, cfg.lr_actor, cfg.grad_steps_actor, rng);
        }
        nets.soft_target_update(cfg.tau);
        ++wall_step;
      }

      if (model_free_e_step || cfg.m_step_mode == MStepMode::copy) {
        nets.m_step_copy();
      } else {
        auto m_batch = synthetic.sample_batch(cfg.batch_ac, rng);
        std::vector<std::pair<Obs, Act>> pairs;
        pairs.reserve(m_batch.size());
        for (const auto& t : m_batch) pairs.emplace_back(t.state, t.action);
        nets.m_step_map(pairs, cfg.lambda, cfg.lr_actor, cfg.grad_steps_actor);
      }
    }

    while (next_eval <= env_steps) {
      emit_eval();
      next_eval += cfg.eval_interval;
    }
  }

  int window = std::min<int>(cfg.smoothing_window, static_cast<int>(result.rows.size()));
  double sum = 0.0;
  for (int i = 0; i < window; ++i)
    sum += result.rows[result.rows.size() - 1 - i].mean_return;
  result.final_smoothed_return = window > 0 ? sum / window : 0.0;
  return result;
}

}  // namespace detail

/// Model-based E-step training loop: collect, then per inner iteration fit
/// the kernel, the log-ratio, the critics (on synthetic experience), and the
/// actor; soft-update targets; finish the round with the baseline update.
template <class Env, class Nets>
TrainResult train_vmbpo(Env& env, Nets& nets, const TrainConfig& cfg, std::uint64_t seed,
                        const MetricsSink& sink = {}) {
  return detail::run_training(env, nets, cfg, seed, /*model_free_e_step=*/false, sink);
}

/// Model-free E-step variant: critics regress on real transitions with the
/// exponential-TD loss; the kernel and log-ratio networks are not trained.
template <class Env, class Nets>
TrainResult train_vmbpo_mfe(Env& env, Nets& nets, const TrainConfig& cfg, std::uint64_t seed,
                            const MetricsSink& sink = {}) {
  return detail::run_training(env, nets, cfg, seed, /*model_free_e_step=*/true, sink);
}

}  // namespace vmbpo
