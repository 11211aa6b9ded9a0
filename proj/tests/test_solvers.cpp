#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vmbpo/envs.hpp"
#include "vmbpo/solvers.hpp"

using namespace vmbpo;

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

double max_policy_diff(const TabularPolicy& a, const TabularPolicy& b, const FiniteMdp& m) {
  double d = 0.0;
  for (int x : m.nonterminal_states())
    for (int i = 0; i < m.num_actions(); ++i) d = std::max(d, std::abs(a.probs[x][i] - b.probs[x][i]));
  return d;
}

double max_dyn_diff(const TabularDynamics& a, const TabularDynamics& b, const FiniteMdp& m) {
  double d = 0.0;
  for (int x : m.nonterminal_states())
    for (int i = 0; i < m.num_actions(); ++i)
      for (int y = 0; y < m.num_states(); ++y)
        d = std::max(d, std::abs(a.probs[x][i][y] - b.probs[x][i][y]));
  return d;
}

}  // namespace

TEST_CASE("policy evaluation on the chain") {
  FiniteMdp m = make_chain();
  TabularPolicy pi = TabularPolicy::uniform(2, 2);
  SolverConfig cfg;
  for (OperatorMode mode : {OperatorMode::model_based, OperatorMode::model_free}) {
    auto ev = policy_evaluation(m, Temperature(1.0), pi, pi, mode, cfg);
    CHECK(ev.v.v[0] == doctest::Approx(0.5).epsilon(1e-10));
  }
  auto dv = policy_evaluation(m, Temperature(1.0), pi, TabularPolicy::deterministic(2, 2, 0),
                              OperatorMode::model_free, cfg);
  CHECK(dv.v.v[0] == doctest::Approx(oracle::kOneMinusLogTwo).epsilon(1e-10));
}

TEST_CASE("policy evaluation modes agree on random MDPs") {
  Rng rng(1);
  SolverConfig cfg;
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    FiniteMdp m = make_random_mdp(7, 3, 4, seed);
    TabularPolicy pi = random_policy(m, rng);
    TabularPolicy qc = random_policy(m, rng);
    auto a = policy_evaluation(m, Temperature(0.8), pi, qc, OperatorMode::model_based, cfg);
    auto b = policy_evaluation(m, Temperature(0.8), pi, qc, OperatorMode::model_free, cfg);
    CHECK(max_abs_diff(a.v, b.v) < 1e-9);
  }
}

TEST_CASE("policy evaluation reports non-convergence with the residual") {
  FiniteMdp m = make_chain();
  TabularPolicy pi = TabularPolicy::uniform(2, 2);
  SolverConfig cfg;
  cfg.max_sweeps = 1;
  cfg.tolerance = 1e-16;
  CHECK_THROWS_AS(policy_evaluation(m, Temperature(1.0), pi, pi, OperatorMode::model_free, cfg),
                  NonConvergenceError);
}

TEST_CASE("policy improvement on the chain") {
  FiniteMdp m = make_chain();
  ActionValueFunction q = ActionValueFunction::zeros(2, 2);
  q.q[0] = {1.0, 0.0};
  SolverConfig cfg;
  auto qc = policy_improvement(m, TabularPolicy::uniform(2, 2), q, cfg);
  CHECK(qc.probs[0][0] == doctest::Approx(oracle::kTwistTwoPoint).epsilon(1e-9));
}

TEST_CASE("policy improvement with a constant row keeps the baseline") {
  FiniteMdp m = make_chain();
  ActionValueFunction q = ActionValueFunction::zeros(2, 2);
  q.q[0] = {0.7, 0.7};
  SolverConfig cfg;
  auto qc = policy_improvement(m, TabularPolicy::uniform(2, 2), q, cfg);
  CHECK(qc.probs[0][0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("both improvement modes coincide on random instances") {
  Rng rng(11);
  for (std::uint64_t seed : {21ull, 22ull, 23ull, 24ull}) {
    FiniteMdp m = make_random_mdp(6, 4, 3, seed);
    TabularPolicy pi = random_policy(m, rng);
    ActionValueFunction q = ActionValueFunction::zeros(m.num_states(), m.num_actions());
    for (int x : m.nonterminal_states())
      for (int a = 0; a < m.num_actions(); ++a) q.q[x][a] = uniform_real(rng, -2.0, 2.0);
    SolverConfig closed;
    SolverConfig proj;
    proj.improvement_mode = ImprovementMode::kl_projection;
    auto a = policy_improvement(m, pi, q, closed);
    auto b = policy_improvement(m, pi, q, proj);
    CHECK(max_policy_diff(a, b, m) < 1e-12);
  }
}

TEST_CASE("policy iteration solves the chain") {
  FiniteMdp m = make_chain();
  TabularPolicy pi = TabularPolicy::uniform(2, 2);
  SolverConfig cfg;
  for (auto solver : {model_based_pi, model_free_pi}) {
    auto sol = solver(m, Temperature(1.0), pi, cfg);
    CHECK(sol.q_c_star.probs[0][0] == doctest::Approx(oracle::kTwistTwoPoint).epsilon(1e-9));
    CHECK(sol.v_pi.v[0] == doctest::Approx(oracle::kSoftTwoPoint).epsilon(1e-9));
    CHECK(max_dyn_diff(sol.q_d_star, TabularDynamics{m.transition}, m) < 1e-12);
    CHECK(sol.residual <= cfg.tolerance);
  }
}

TEST_CASE("policy iteration with zero rewards returns the baseline pair") {
  FiniteMdp m = make_random_mdp(6, 3, 3, 31);
  for (auto& row : m.reward) std::fill(row.begin(), row.end(), 0.0);
  Rng rng(31);
  TabularPolicy pi = random_policy(m, rng);
  SolverConfig cfg;
  auto sol = model_based_pi(m, Temperature(1.0), pi, cfg);
  CHECK(max_policy_diff(sol.q_c_star, pi, m) < 1e-10);
  CHECK(max_dyn_diff(sol.q_d_star, TabularDynamics{m.transition}, m) < 1e-10);
  for (int x : m.nonterminal_states()) CHECK(std::abs(sol.v_pi.v[x]) < 1e-10);
}

TEST_CASE("policy iteration variants and value iteration agree") {
  Rng rng(41);
  SolverConfig cfg;
  for (std::uint64_t seed : {51ull, 52ull, 53ull, 54ull, 55ull, 56ull, 57ull, 58ull, 59ull, 60ull}) {
    FiniteMdp m = make_random_mdp(8, 3, 4, seed);
    TabularPolicy pi = random_policy(m, rng);
    Temperature eta(1.0);
    EStepSolution sols[4] = {
        model_based_pi(m, eta, pi, cfg),
        model_free_pi(m, eta, pi, cfg),
        value_iteration(m, eta, pi, OperatorMode::model_based, cfg),
        value_iteration(m, eta, pi, OperatorMode::model_free, cfg),
    };
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) {
        CHECK(max_abs_diff(sols[i].v_pi, sols[j].v_pi) < 1e-8);
        CHECK(max_policy_diff(sols[i].q_c_star, sols[j].q_c_star, m) < 1e-8);
        CHECK(max_dyn_diff(sols[i].q_d_star, sols[j].q_d_star, m) < 1e-8);
      }
  }
}

TEST_CASE("value iteration on the chain converges in one sweep") {
  FiniteMdp m = make_chain();
  SolverConfig cfg;
  auto sol = value_iteration(m, Temperature(1.0), TabularPolicy::uniform(2, 2),
                             OperatorMode::model_free, cfg);
  CHECK(sol.v_pi.v[0] == doctest::Approx(oracle::kSoftTwoPoint).epsilon(1e-12));
  CHECK(sol.iterations <= 2);
}

TEST_CASE("value iteration reaches the same fixed point from different starts") {
  Rng rng(61);
  SolverConfig cfg;
  for (std::uint64_t seed : {71ull, 72ull, 73ull}) {
    FiniteMdp m = make_random_mdp(7, 3, 3, seed);
    TabularPolicy pi = random_policy(m, rng);
    ValueFunction v0 = ValueFunction::zeros(m.num_states());
    for (int x : m.nonterminal_states()) v0.v[x] = uniform_real(rng, -3.0, 3.0);
    auto a = value_iteration(m, Temperature(1.0), pi, OperatorMode::model_free, cfg);
    auto b = value_iteration(m, Temperature(1.0), pi, OperatorMode::model_free, cfg, &v0);
    CHECK(max_abs_diff(a.v_pi, b.v_pi) < 1e-8);
  }
}

TEST_CASE("the e-step value is a fixed point and matches the softmax identity") {
  Rng rng(81);
  SolverConfig cfg;
  for (std::uint64_t seed : {91ull, 92ull, 93ull}) {
    FiniteMdp m = make_random_mdp(8, 4, 4, seed);
    TabularPolicy pi = random_policy(m, rng);
    Temperature eta(1.1);
    auto sol = value_iteration(m, eta, pi, OperatorMode::model_free, cfg);
    auto tv = apply_optimal_operator(m, eta, pi, sol.v_pi);
    CHECK(max_abs_diff(tv, sol.v_pi) <= 10 * cfg.tolerance);
    auto v_soft = softmax_value(m, pi, sol.q_pi);
    CHECK(max_abs_diff(v_soft, sol.v_pi) < 1e-9);
  }
}

TEST_CASE("twist denominators at the fixed point match the identities") {
  Rng rng(101);
  SolverConfig cfg;
  FiniteMdp m = make_random_mdp(7, 3, 3, 111);
  TabularPolicy pi = random_policy(m, rng);
  Temperature eta(0.9);
  auto sol = value_iteration(m, eta, pi, OperatorMode::model_free, cfg);
  for (int x : m.nonterminal_states()) {
    double denom_c = 0.0;
    for (int a = 0; a < m.num_actions(); ++a)
      denom_c += pi.probs[x][a] * std::exp(sol.q_pi.q[x][a]);
    CHECK(denom_c == doctest::Approx(std::exp(sol.v_pi.v[x])).epsilon(1e-9));
    for (int a = 0; a < m.num_actions(); ++a) {
      double denom_d = 0.0;
      for (int y = 0; y < m.num_states(); ++y)
        denom_d += m.transition[x][a][y] * std::exp(sol.v_pi.v[y]);
      CHECK(denom_d ==
            doctest::Approx(std::exp(sol.q_pi.q[x][a] - eta.eta * m.reward[x][a])).epsilon(1e-9));
    }
  }
}

TEST_CASE("policy iteration improves values monotonically in both modes") {
  Rng rng(121);
  for (std::uint64_t seed : {131ull, 132ull, 133ull, 134ull}) {
    FiniteMdp m = make_random_mdp(8, 3, 4, seed);
    TabularPolicy pi = random_policy(m, rng);
    for (ImprovementMode im : {ImprovementMode::closed_form, ImprovementMode::kl_projection}) {
      SolverConfig cfg;
      cfg.improvement_mode = im;
      auto sol = model_based_pi(m, Temperature(1.0), pi, cfg);
      for (std::size_t k = 1; k < sol.value_trace.size(); ++k)
        for (int x : m.nonterminal_states())
          CHECK(sol.value_trace[k].v[x] >= sol.value_trace[k - 1].v[x] - 1e-10);
    }
  }
}

TEST_CASE("the initial-state average of the fixed point equals the brute-force likelihood") {
  Rng rng(141);
  SolverConfig cfg;
  for (std::uint64_t seed : {151ull, 152ull, 153ull, 154ull, 155ull}) {
    FiniteMdp m = make_random_mdp(8, 3, 4, seed);
    TabularPolicy pi = random_policy(m, rng);
    Temperature eta(1.0);
    auto sol = value_iteration(m, eta, pi, OperatorMode::model_free, cfg);
    double fp = 0.0;
    for (int x = 0; x < m.num_states(); ++x) fp += m.initial[x] * sol.v_pi.v[x];
    CHECK(fp == doctest::Approx(log_likelihood(m, eta, pi)).epsilon(1e-8));
  }
}

TEST_CASE("occupancy weights on the chain") {
  FiniteMdp m = make_chain();
  TabularPolicy pi = TabularPolicy::uniform(2, 2);
  auto d = occupancy_weights(m, pi, TabularDynamics{m.transition});
  CHECK(d[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d[1] == 0.0);
}

TEST_CASE("exact m-step with no regularization returns the variational policy") {
  FiniteMdp m = make_chain();
  SolverConfig cfg;
  auto sol = value_iteration(m, Temperature(1.0), TabularPolicy::uniform(2, 2),
                             OperatorMode::model_free, cfg);
  auto pi_new = m_step_exact(m, sol, TabularPolicy::uniform(2, 2), 0.0);
  CHECK(pi_new.probs[0][0] == doctest::Approx(oracle::kTwistTwoPoint).epsilon(1e-10));
}

TEST_CASE("exact m-step with huge regularization keeps the old policy") {
  FiniteMdp m = make_chain();
  SolverConfig cfg;
  TabularPolicy pi = TabularPolicy::uniform(2, 2);
  auto sol = value_iteration(m, Temperature(1.0), pi, OperatorMode::model_free, cfg);
  auto pi_new = m_step_exact(m, sol, pi, 1e7);
  CHECK(std::abs(pi_new.probs[0][0] - 0.5) < 1e-6);
}

TEST_CASE("exact m-step interpolates and matches the convex-solve oracle") {
  FiniteMdp m = make_chain();
  SolverConfig cfg;
  TabularPolicy pi = TabularPolicy::uniform(2, 2);
  auto sol = value_iteration(m, Temperature(1.0), pi, OperatorMode::model_free, cfg);
  auto pi_new = m_step_exact(m, sol, pi, 1.0);
  double lo = std::min(0.5, sol.q_c_star.probs[0][0]);
  double hi = std::max(0.5, sol.q_c_star.probs[0][0]);
  CHECK(pi_new.probs[0][0] >= lo);
  CHECK(pi_new.probs[0][0] <= hi);
  // independent projected-gradient solve of max sum_a c_a log pi_a
  std::vector<double> c = {sol.q_c_star.probs[0][0] + 0.5, sol.q_c_star.probs[0][1] + 0.5};
  auto best = oracle::maximize_weighted_log(c);
  CHECK(pi_new.probs[0][0] == doctest::Approx(best.arg[0]).epsilon(1e-6));
}

TEST_CASE("em iterations never decrease the log-likelihood") {
  FiniteMdp m = make_chain();
  SolverConfig cfg;
  auto recs = em_solve(m, Temperature(1.0), TabularPolicy::uniform(2, 2), 3, 0.0, cfg);
  REQUIRE(recs.size() == 3);
  for (std::size_t k = 1; k < recs.size(); ++k)
    CHECK(recs[k].log_likelihood_value >= recs[k - 1].log_likelihood_value - 1e-12);
}

TEST_CASE("em leaves the policy unchanged when rewards vanish") {
  FiniteMdp m = make_random_mdp(6, 3, 3, 161);
  for (auto& row : m.reward) std::fill(row.begin(), row.end(), 0.0);
  Rng rng(161);
  TabularPolicy pi0 = random_policy(m, rng);
  SolverConfig cfg;
  auto recs = em_solve(m, Temperature(1.0), pi0, 3, 0.0, cfg);
  for (const auto& rec : recs) CHECK(max_policy_diff(rec.baseline, pi0, m) < 1e-9);
}

TEST_CASE("em records are consistent with the enumeration oracles") {
  Rng rng(171);
  SolverConfig cfg;
  for (std::uint64_t seed : {181ull, 182ull, 183ull}) {
    FiniteMdp m = make_random_mdp(7, 2, 3, seed);
    TabularPolicy pi0 = random_policy(m, rng);
    auto recs = em_solve(m, Temperature(1.0), pi0, 4, 0.0, cfg);
    for (std::size_t k = 0; k < recs.size(); ++k) {
      // zero E-step gap at the twisted pair (deterministic start)
      CHECK(std::abs(recs[k].elbo_value - recs[k].log_likelihood_value) < 1e-8);
      CHECK(std::abs(recs[k].elbo_value - recs[k].fixed_point_value) < 1e-9);
      if (k + 1 < recs.size()) {
        CHECK(recs[k].elbo_value <= recs[k + 1].log_likelihood_value + 1e-9);
        CHECK(recs[k + 1].log_likelihood_value >= recs[k].log_likelihood_value - 1e-9);
      }
    }
  }
}

TEST_CASE("em works on cyclic fixtures through the linear route") {
  FiniteMdp m = make_gridworld(3);
  SolverConfig cfg;
  auto recs = em_solve(m, Temperature(1.0), TabularPolicy::uniform(m.num_states(), 4), 3, 0.0, cfg);
  REQUIRE(recs.size() == 3);
  for (std::size_t k = 1; k < recs.size(); ++k)
    CHECK(recs[k].fixed_point_value >= recs[k - 1].fixed_point_value - 1e-9);
}

TEST_CASE("solver configuration is validated") {
  SolverConfig cfg;
  cfg.tolerance = 0.0;
  FiniteMdp m = make_chain();
  CHECK_THROWS_AS(value_iteration(m, Temperature(1.0), TabularPolicy::uniform(2, 2),
                                  OperatorMode::model_free, cfg),
                  std::invalid_argument);
}
