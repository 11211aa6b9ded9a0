#include "vmbpo/checks.hpp"

#include <algorithm>
#include <cmath>

#include "vmbpo/envs.hpp"
#include "vmbpo/gaussian_nets.hpp"
#include "vmbpo/solvers.hpp"
#include "vmbpo/tabular_nets.hpp"

namespace vmbpo {

namespace {

TabularPolicy random_policy(const FiniteMdp& m, Rng& rng) {
  TabularPolicy pi = TabularPolicy::uniform(m.num_states(), m.num_actions());
  for (int x = 0; x < m.num_states(); ++x) {
    double z = 0.0;
    for (int a = 0; a < m.num_actions(); ++a) {
      pi.probs[x][a] = uniform_real(rng, 0.05, 1.0);
      z += pi.probs[x][a];
    }
    for (double& p : pi.probs[x]) p /= z;
  }
  return pi;
}

ValueFunction random_values(const FiniteMdp& m, Rng& rng, double scale = 1.0) {
  ValueFunction v = ValueFunction::zeros(m.num_states());
  for (int x : m.nonterminal_states()) v.v[x] = uniform_real(rng, -scale, scale);
  return v;
}

// Numeric maximizer of sum_i q_i (c_i - log(q_i/p_i)) over the simplex:
// projected gradient ascent with an Armijo search, then multiplicative
// polish. Independent of the closed-form twisting path.
struct SimplexMax {
  std::vector<double> arg;
  double value;
};

std::vector<double> project_simplex(std::vector<double> y) {
  std::vector<double> u = y;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, tau = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    css += u[i];
    double t = (css - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) tau = t;
  }
  for (double& v : y) v = std::max(0.0, v - tau);
  return y;
}

SimplexMax maximize_twisted(const std::vector<double>& c, const std::vector<double>& p) {
  std::vector<int> sup;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) sup.push_back(static_cast<int>(i));
  const std::size_t m = sup.size();
  std::vector<double> q(m);
  double z = 0.0;
  for (std::size_t k = 0; k < m; ++k) z += p[sup[k]];
  for (std::size_t k = 0; k < m; ++k) q[k] = p[sup[k]] / z;

  auto objective = [&](const std::vector<double>& qq) {
    double f = 0.0;
    for (std::size_t k = 0; k < m; ++k)
      if (qq[k] > 0.0) f += qq[k] * (c[sup[k]] - std::log(qq[k] / p[sup[k]]));
    return f;
  };
  for (int it = 0; it < 2000; ++it) {
    std::vector<double> g(m);
    for (std::size_t k = 0; k < m; ++k)
      g[k] = c[sup[k]] - std::log(std::max(q[k], 1e-300) / p[sup[k]]) - 1.0;
    double fq = objective(q);
    double step = 1.0;
    std::vector<double> qn = q;
    while (step > 1e-18) {
      std::vector<double> y(m);
      for (std::size_t k = 0; k < m; ++k) y[k] = q[k] + step * g[k];
      qn = project_simplex(std::move(y));
      double dir = 0.0;
      for (std::size_t k = 0; k < m; ++k) dir += g[k] * (qn[k] - q[k]);
      if (objective(qn) >= fq + 1e-4 * dir) break;
      step *= 0.5;
    }
    double moved = 0.0;
    for (std::size_t k = 0; k < m; ++k) moved = std::max(moved, std::abs(qn[k] - q[k]));
    q = std::move(qn);
    if (moved < 1e-12) break;
  }
  std::vector<double> logq(m);
  for (std::size_t k = 0; k < m; ++k) logq[k] = std::log(std::max(q[k], 1e-300));
  for (int it = 0; it < 400; ++it) {
    double mean = 0.0, stationarity = 0.0;
    std::vector<double> gl(m);
    for (std::size_t k = 0; k < m; ++k) {
      gl[k] = c[sup[k]] + std::log(p[sup[k]]) - logq[k];
      mean += gl[k];
    }
    mean /= static_cast<double>(m);
    for (std::size_t k = 0; k < m; ++k) stationarity = std::max(stationarity, std::abs(gl[k] - mean));
    if (stationarity < 1e-15) break;
    double hi = -1e300;
    for (std::size_t k = 0; k < m; ++k) {
      logq[k] += 0.5 * gl[k];
      hi = std::max(hi, logq[k]);
    }
    double zz = 0.0;
    for (std::size_t k = 0; k < m; ++k) zz += std::exp(logq[k] - hi);
    double lz = hi + std::log(zz);
    for (std::size_t k = 0; k < m; ++k) logq[k] -= lz;
  }
  for (std::size_t k = 0; k < m; ++k) q[k] = std::exp(logq[k]);
  std::vector<double> full(p.size(), 0.0);
  for (std::size_t k = 0; k < m; ++k) full[sup[k]] = q[k];
  return {full, objective(q)};
}

CheckResult check_twist_policy_maximizer(const CheckOptions& opts) {
  CheckResult res{"twist_policy_maximizer", true, ""};
  Rng rng(opts.seed);
  for (int rep = 0; rep < 100 && res.passed; ++rep) {
    FiniteMdp m = make_random_mdp(6, 4, 3, opts.seed * 1000 + rep);
    TabularPolicy pi = random_policy(m, rng);
    ValueFunction v = random_values(m, rng);
    Temperature eta(1.0);
    auto q = q_from_v(m, eta, v);
    auto qc = twist_policy(m, pi, q);
    if (opts.corrupt_twist_policy) {
      for (int x : m.nonterminal_states()) {
        qc.probs[x][0] = std::min(1.0, qc.probs[x][0] + 1e-3);
        double z = 0.0;
        for (double p : qc.probs[x]) z += p;
        for (double& p : qc.probs[x]) p /= z;
      }
    }
    auto soft = softmax_value(m, pi, q);
    for (int x : m.nonterminal_states()) {
      auto best = maximize_twisted(q.q[x], pi.probs[x]);
      if (std::abs(best.value - soft.v[x]) > 1e-6) {
        res.passed = false;
        res.detail = "maximized objective mismatch at " + m.states[x];
        break;
      }
      for (int a = 0; a < m.num_actions(); ++a)
        if (std::abs(best.arg[a] - qc.probs[x][a]) > 1e-6) {
          res.passed = false;
          res.detail = "maximizer mismatch at " + m.states[x];
          break;
        }
      if (!res.passed) break;
    }
  }
  return res;
}

CheckResult check_twist_dynamics_maximizer(const CheckOptions& opts) {
  CheckResult res{"twist_dynamics_maximizer", true, ""};
  Rng rng(opts.seed + 1);
  for (int rep = 0; rep < 100 && res.passed; ++rep) {
    FiniteMdp m = make_random_mdp(6, 3, 3, opts.seed * 2000 + rep);
    ValueFunction v = random_values(m, rng);
    auto qd = twist_dynamics(m, v);
    for (int x : m.nonterminal_states()) {
      for (int a = 0; a < m.num_actions(); ++a) {
        auto best = maximize_twisted(v.v, m.transition[x][a]);
        for (int y = 0; y < m.num_states(); ++y)
          if (std::abs(best.arg[y] - qd.probs[x][a][y]) > 1e-6) {
            res.passed = false;
            res.detail = "maximizer mismatch at (" + m.states[x] + "," + m.actions[a] + ")";
            break;
          }
        if (!res.passed) break;
      }
      if (!res.passed) break;
    }
  }
  return res;
}

CheckResult check_operator_monotonicity(const CheckOptions& opts) {
  CheckResult res{"operator_monotonicity", true, ""};
  Rng rng(opts.seed + 2);
  for (int rep = 0; rep < 100 && res.passed; ++rep) {
    FiniteMdp m = make_random_mdp(5, 2, 3, opts.seed * 3000 + rep);
    TabularPolicy pi = random_policy(m, rng);
    TabularPolicy qc = random_policy(m, rng);
    ValueFunction v = random_values(m, rng);
    ValueFunction w = v;
    for (int x : m.nonterminal_states()) w.v[x] += uniform_real(rng, 0.0, 1.0);
    Temperature eta(1.0);
    auto tv = apply_optimal_operator(m, eta, pi, v);
    auto tw = apply_optimal_operator(m, eta, pi, w);
    auto iv = apply_induced_operator(m, eta, pi, qc, v, OperatorMode::model_free);
    auto iw = apply_induced_operator(m, eta, pi, qc, w, OperatorMode::model_free);
    for (int x : m.nonterminal_states())
      if (tv.v[x] > tw.v[x] + 1e-12 || iv.v[x] > iw.v[x] + 1e-12) {
        res.passed = false;
        res.detail = "monotonicity violated at " + m.states[x];
      }
  }
  return res;
}

CheckResult check_pi_vi_agreement(const CheckOptions& opts) {
  CheckResult res{"pi_vi_agreement", true, ""};
  Rng rng(opts.seed + 3);
  SolverConfig cfg;
  for (int rep = 0; rep < 10 && res.passed; ++rep) {
    FiniteMdp m = make_random_mdp(8, 3, 4, opts.seed * 4000 + rep);
    TabularPolicy pi = random_policy(m, rng);
    Temperature eta(1.0);
    EStepSolution sols[4] = {
        model_based_pi(m, eta, pi, cfg),
        model_free_pi(m, eta, pi, cfg),
        value_iteration(m, eta, pi, OperatorMode::model_based, cfg),
        value_iteration(m, eta, pi, OperatorMode::model_free, cfg),
    };
    for (int i = 0; i < 4 && res.passed; ++i)
      for (int j = i + 1; j < 4; ++j)
        if (max_abs_diff(sols[i].v_pi, sols[j].v_pi) > 1e-8 ||
            max_abs_diff(sols[i].q_c_star, sols[j].q_c_star) > 1e-8) {
          res.passed = false;
          res.detail = "solver disagreement on instance " + std::to_string(rep);
          break;
        }
  }
  return res;
}

CheckResult check_elbo_likelihood_bound(const CheckOptions& opts) {
  CheckResult res{"elbo_likelihood_bound", true, ""};
  Rng rng(opts.seed + 4);
  for (int rep = 0; rep < 50 && res.passed; ++rep) {
    FiniteMdp m = make_random_mdp(6, 2, 3, opts.seed * 5000 + rep);
    TabularPolicy pi = random_policy(m, rng);
    TabularPolicy qc = random_policy(m, rng);
    ValueFunction v = random_values(m, rng);
    TabularDynamics qd = twist_dynamics(m, v);
    Temperature eta(1.0);
    if (elbo(m, eta, qc, qd, pi) > log_likelihood(m, eta, pi) + 1e-12) {
      res.passed = false;
      res.detail = "bound violated on instance " + std::to_string(rep);
    }
  }
  return res;
}

CheckResult check_fixed_point_residual(const CheckOptions& opts) {
  CheckResult res{"fixed_point_residual", true, ""};
  Rng rng(opts.seed + 5);
  SolverConfig cfg;
  for (int rep = 0; rep < 10 && res.passed; ++rep) {
    FiniteMdp m = make_random_mdp(7, 3, 3, opts.seed * 6000 + rep);
    TabularPolicy pi = random_policy(m, rng);
    Temperature eta(1.0);
    auto sol = value_iteration(m, eta, pi, OperatorMode::model_free, cfg);
    auto tv = apply_optimal_operator(m, eta, pi, sol.v_pi);
    if (max_abs_diff(tv, sol.v_pi) > 10 * cfg.tolerance) {
      res.passed = false;
      res.detail = "residual above tolerance on instance " + std::to_string(rep);
    }
    auto vs = softmax_value(m, pi, sol.q_pi);
    if (max_abs_diff(vs, sol.v_pi) > 1e-9) {
      res.passed = false;
      res.detail = "softmax identity violated on instance " + std::to_string(rep);
    }
  }
  return res;
}

CheckResult check_gradient_finite_difference(const CheckOptions& opts) {
  CheckResult res{"gradient_finite_difference", true, ""};
  Rng rng(opts.seed + 6);
  for (int rep = 0; rep < 5 && res.passed; ++rep) {
    GaussianVmbpoNets nets(3, 2, {6, 5}, rng);
    std::vector<double> obs(3), noise(2);
    for (double& v : obs) v = uniform_real(rng, -0.8, 0.8);
    for (double& v : noise) v = uniform_real(rng, -1.0, 1.0);
    std::vector<double> grad(nets.qc_params().size(), 0.0);
    nets.actor_loss_backward(obs, noise, 1.0, grad);
    std::vector<double> params(nets.qc_params().begin(), nets.qc_params().end());
    auto value = [&]() {
      std::copy(params.begin(), params.end(), nets.qc_params_mut().begin());
      return nets.actor_loss_at(obs, noise);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
      double orig = params[i];
      params[i] = orig + 1e-5;
      double hi = value();
      params[i] = orig - 1e-5;
      double lo = value();
      params[i] = orig;
      value();
      double fd = (hi - lo) / 2e-5;
      double denom = std::max(std::abs(fd), std::abs(grad[i]));
      bool ok = denom < 1e-6 ? std::abs(fd - grad[i]) < 1e-8
                             : std::abs(fd - grad[i]) / denom < 1e-4;
      if (!ok) {
        res.passed = false;
        res.detail = "actor-loss gradient mismatch at coordinate " + std::to_string(i);
        break;
      }
    }
  }
  return res;
}

CheckResult check_tabular_update_fixed_points(const CheckOptions& opts) {
  CheckResult res{"tabular_update_fixed_points", true, ""};
  (void)opts;
  FiniteMdp m = make_chain();
  // actor: with Q = (1,0) the variational policy must reach the twist
  {
    TabularVmbpoNets nets(m);
    ActionValueFunction q = ActionValueFunction::zeros(2, 2);
    q.q[0] = {1.0, 0.0};
    nets.set_q(q);
    std::vector<int> states = {0};
    Rng rng(1);
    nets.update_actor(states, nullptr, 0.02, 6000, rng);
    nets.update_actor(states, nullptr, 5e-4, 3000, rng);
    double want = std::exp(1.0) / (std::exp(1.0) + 1.0);
    if (std::abs(nets.qc_table().probs[0][0] - want) > 1e-3) {
      res.passed = false;
      res.detail = "actor fixed point missed";
      return res;
    }
  }
  // critic: the regression target is the one-step soft backup
  {
    TabularVmbpoNets nets(m);
    std::vector<TabularVmbpoNets::Tr> batch;
    std::vector<double> w;
    for (int a = 0; a < 2; ++a) {
      TabularVmbpoNets::Tr t;
      t.state = 0;
      t.action = a;
      t.reward = m.reward[0][a];
      t.next_state = 1;
      t.terminal = true;
      t.source = Source::synthetic;
      batch.push_back(t);
      w.push_back(0.5);
    }
    nets.update_q(batch, &w, 1.0, 0.02, 6000);
    nets.update_q(batch, &w, 1.0, 5e-4, 3000);
    if (std::abs(nets.q_value(0, 0) - 1.0) > 1e-3 || std::abs(nets.q_value(0, 1)) > 1e-3) {
      res.passed = false;
      res.detail = "critic fixed point missed";
    }
  }
  return res;
}

}  // namespace

std::vector<CheckResult> run_invariant_checks(const CheckOptions& opts) {
  std::vector<CheckResult> results;
  results.push_back(check_twist_policy_maximizer(opts));
  results.push_back(check_twist_dynamics_maximizer(opts));
  results.push_back(check_operator_monotonicity(opts));
  results.push_back(check_pi_vi_agreement(opts));
  results.push_back(check_elbo_likelihood_bound(opts));
  results.push_back(check_fixed_point_residual(opts));
  results.push_back(check_gradient_finite_difference(opts));
  results.push_back(check_tabular_update_fixed_points(opts));
  return results;
}

}  // namespace vmbpo
