#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vmbpo/envs.hpp"
#include "vmbpo/variational.hpp"

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

ValueFunction random_values(const FiniteMdp& m, Rng& rng, double scale = 1.0) {
  ValueFunction v = ValueFunction::zeros(m.num_states());
  for (int x = 0; x < m.num_states(); ++x)
    if (!m.is_terminal(x)) v.v[x] = uniform_real(rng, -scale, scale);
  return v;
}

}  // namespace

TEST_CASE("q_from_v on the chain with zero values") {
  FiniteMdp m = make_chain();
  auto q = q_from_v(m, Temperature(1.0), ValueFunction::zeros(2));
  CHECK(q.q[0][0] == doctest::Approx(1.0));
  CHECK(q.q[0][1] == doctest::Approx(0.0));
}

TEST_CASE("q_from_v log-mean-exp over the two-successor fixture") {
  FiniteMdp m = make_twist_pair();
  ValueFunction v = ValueFunction::zeros(4);
  v.v[1] = 1.0;  // g
  auto q = q_from_v(m, Temperature(1.0), v);
  CHECK(q.q[0][0] == doctest::Approx(oracle::kSoftTwoPoint).epsilon(1e-12));
}

TEST_CASE("q_from_v with zero values scales rewards by the temperature") {
  FiniteMdp m = make_random_mdp(7, 3, 3, 17);
  auto q = q_from_v(m, Temperature(2.0), ValueFunction::zeros(m.num_states()));
  for (int x : m.nonterminal_states())
    for (int a = 0; a < m.num_actions(); ++a)
      CHECK(q.q[x][a] == doctest::Approx(2.0 * m.reward[x][a]).epsilon(1e-12));
}

TEST_CASE("softmax_value on the chain") {
  FiniteMdp m = make_chain();
  ActionValueFunction q = ActionValueFunction::zeros(2, 2);
  q.q[0] = {1.0, 0.0};
  auto v = softmax_value(m, TabularPolicy::uniform(2, 2), q);
  CHECK(v.v[0] == doctest::Approx(oracle::kSoftTwoPoint).epsilon(1e-12));
  CHECK(v.v[1] == 0.0);

  auto vd = softmax_value(m, TabularPolicy::deterministic(2, 2, 0), q);
  CHECK(vd.v[0] == doctest::Approx(1.0));
}

TEST_CASE("softmax_value of a constant row is the constant") {
  FiniteMdp m = make_random_mdp(6, 3, 3, 3);
  Rng rng(3);
  ActionValueFunction q = ActionValueFunction::zeros(m.num_states(), m.num_actions());
  std::vector<double> c(m.num_states());
  for (int x : m.nonterminal_states()) {
    c[x] = uniform_real(rng, -2.0, 2.0);
    for (int a = 0; a < m.num_actions(); ++a) q.q[x][a] = c[x];
  }
  auto v = softmax_value(m, random_policy(m, rng), q);
  for (int x : m.nonterminal_states()) CHECK(v.v[x] == doctest::Approx(c[x]).epsilon(1e-12));
}

TEST_CASE("twist_dynamics on the two-successor fixture") {
  FiniteMdp m = make_twist_pair();
  ValueFunction v = ValueFunction::zeros(4);
  v.v[1] = 1.0;
  auto qd = twist_dynamics(m, v);
  CHECK(qd.probs[0][0][1] == doctest::Approx(oracle::kTwistTwoPoint).epsilon(1e-12));
  CHECK(validate_dynamics(m, qd).empty());
}

TEST_CASE("twist_dynamics with zero values is the kernel itself") {
  FiniteMdp m = make_random_mdp(8, 3, 4, 9);
  auto qd = twist_dynamics(m, ValueFunction::zeros(m.num_states()));
  for (int x : m.nonterminal_states())
    for (int a = 0; a < m.num_actions(); ++a)
      for (int y = 0; y < m.num_states(); ++y)
        CHECK(qd.probs[x][a][y] == doctest::Approx(m.transition[x][a][y]).epsilon(1e-14));
}

TEST_CASE("twist_dynamics is exactly invariant to constant value shifts") {
  FiniteMdp m = make_random_mdp(8, 2, 4, 13);
  Rng rng(13);
  ValueFunction v = random_values(m, rng);
  ValueFunction w = v;
  for (int x : m.nonterminal_states()) w.v[x] += 3.7;
  // terminals keep 0 in both; shift only nonterminal entries and successors
  for (int x = 0; x < m.num_states(); ++x) w.v[x] = v.v[x] + 3.7;
  auto a = twist_dynamics(m, v);
  auto b = twist_dynamics(m, w);
  for (int x : m.nonterminal_states())
    for (int ac = 0; ac < m.num_actions(); ++ac)
      for (int y = 0; y < m.num_states(); ++y)
        CHECK(a.probs[x][ac][y] == doctest::Approx(b.probs[x][ac][y]).epsilon(1e-14));
}

TEST_CASE("twist_policy on the chain") {
  FiniteMdp m = make_chain();
  ActionValueFunction q = ActionValueFunction::zeros(2, 2);
  q.q[0] = {1.0, 0.0};
  auto qc = twist_policy(m, TabularPolicy::uniform(2, 2), q);
  CHECK(qc.probs[0][0] == doctest::Approx(oracle::kTwistTwoPoint).epsilon(1e-12));
}

TEST_CASE("twist_policy keeps zero baseline mass at zero") {
  FiniteMdp m = make_chain();
  TabularPolicy pi{{{1.0, 0.0}, {1.0, 0.0}}};
  ActionValueFunction q = ActionValueFunction::zeros(2, 2);
  q.q[0] = {0.0, 100.0};
  auto qc = twist_policy(m, pi, q);
  CHECK(qc.probs[0][1] == 0.0);
  CHECK(qc.probs[0][0] == doctest::Approx(1.0));
}

TEST_CASE("twist_policy with a constant row returns the baseline") {
  FiniteMdp m = make_random_mdp(6, 4, 3, 23);
  Rng rng(23);
  TabularPolicy pi = random_policy(m, rng);
  ActionValueFunction q = ActionValueFunction::zeros(m.num_states(), m.num_actions());
  for (int x : m.nonterminal_states())
    for (int a = 0; a < m.num_actions(); ++a) q.q[x][a] = 1.25;
  auto qc = twist_policy(m, pi, q);
  for (int x : m.nonterminal_states())
    for (int a = 0; a < m.num_actions(); ++a)
      CHECK(qc.probs[x][a] == doctest::Approx(pi.probs[x][a]).epsilon(1e-14));
}

TEST_CASE("induced operator on the chain") {
  FiniteMdp m = make_chain();
  TabularPolicy pi = TabularPolicy::uniform(2, 2);
  ValueFunction v0 = ValueFunction::zeros(2);
  for (OperatorMode mode : {OperatorMode::model_based, OperatorMode::model_free}) {
    auto tv = apply_induced_operator(m, Temperature(1.0), pi, pi, v0, mode);
    CHECK(tv.v[0] == doctest::Approx(0.5).epsilon(1e-12));
  }
  // twisted policy attains the softmax value
  auto q = q_from_v(m, Temperature(1.0), v0);
  auto qc = twist_policy(m, pi, q);
  auto tv = apply_induced_operator(m, Temperature(1.0), pi, qc, v0, OperatorMode::model_free);
  CHECK(tv.v[0] == doctest::Approx(oracle::kSoftTwoPoint).epsilon(1e-12));
}

TEST_CASE("induced operator modes agree on random instances") {
  Rng rng(31);
  for (std::uint64_t seed : {41ull, 42ull, 43ull, 44ull, 45ull}) {
    FiniteMdp m = make_random_mdp(5, 3, 3, seed);
    TabularPolicy pi = random_policy(m, rng);
    TabularPolicy qc = random_policy(m, rng);
    ValueFunction v = random_values(m, rng, 2.0);
    auto a = apply_induced_operator(m, Temperature(0.7), pi, qc, v, OperatorMode::model_based);
    auto b = apply_induced_operator(m, Temperature(0.7), pi, qc, v, OperatorMode::model_free);
    CHECK(max_abs_diff(a, b) < 1e-10);
  }
}

TEST_CASE("induced operator rejects q_c outside the baseline support") {
  FiniteMdp m = make_chain();
  TabularPolicy pi{{{1.0, 0.0}, {0.5, 0.5}}};
  TabularPolicy qc = TabularPolicy::uniform(2, 2);
  CHECK_THROWS_AS(apply_induced_operator(m, Temperature(1.0), pi, qc, ValueFunction::zeros(2),
                                         OperatorMode::model_free),
                  SupportError);
}

TEST_CASE("optimal operator on the chain") {
  FiniteMdp m = make_chain();
  auto tv = apply_optimal_operator(m, Temperature(1.0), TabularPolicy::uniform(2, 2),
                                   ValueFunction::zeros(2));
  CHECK(tv.v[0] == doctest::Approx(oracle::kSoftTwoPoint).epsilon(1e-12));
}

TEST_CASE("optimal operator is zero for zero rewards and values") {
  FiniteMdp m = make_random_mdp(7, 2, 3, 51);
  for (auto& row : m.reward) std::fill(row.begin(), row.end(), 0.0);
  auto tv = apply_optimal_operator(m, Temperature(1.0),
                                   TabularPolicy::uniform(m.num_states(), m.num_actions()),
                                   ValueFunction::zeros(m.num_states()));
  for (double v : tv.v) CHECK(v == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("optimal operator equals the induced operator at the twisted policy") {
  Rng rng(61);
  for (std::uint64_t seed : {71ull, 72ull, 73ull, 74ull, 75ull}) {
    FiniteMdp m = make_random_mdp(5, 3, 3, seed);
    TabularPolicy pi = random_policy(m, rng);
    ValueFunction v = random_values(m, rng, 2.0);
    Temperature eta(1.3);
    auto q = q_from_v(m, eta, v);
    auto qc = twist_policy(m, pi, q);
    auto lhs = apply_optimal_operator(m, eta, pi, v);
    auto rhs = apply_induced_operator(m, eta, pi, qc, v, OperatorMode::model_free);
    CHECK(max_abs_diff(lhs, rhs) < 1e-10);
  }
}

TEST_CASE("elbo with the identity pair is the scaled expected return") {
  FiniteMdp m = make_chain();
  TabularPolicy pi = TabularPolicy::uniform(2, 2);
  TabularDynamics qd{m.transition};
  CHECK(elbo(m, Temperature(1.0), pi, qd, pi) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("elbo at the twisted pair attains the soft value") {
  FiniteMdp m = make_chain();
  TabularPolicy pi = TabularPolicy::uniform(2, 2);
  auto q = q_from_v(m, Temperature(1.0), ValueFunction::zeros(2));
  auto qc = twist_policy(m, pi, q);
  TabularDynamics qd{m.transition};  // next state deterministic, twist is p
  CHECK(elbo(m, Temperature(1.0), qc, qd, pi) == doctest::Approx(oracle::kSoftTwoPoint).epsilon(1e-12));
}

TEST_CASE("elbo rejects support violations") {
  FiniteMdp m = make_chain();
  TabularPolicy pi{{{1.0, 0.0}, {0.5, 0.5}}};
  TabularDynamics qd{m.transition};
  CHECK_THROWS_AS(elbo(m, Temperature(1.0), TabularPolicy::uniform(2, 2), qd, pi), SupportError);
}

TEST_CASE("elbo_linear matches enumeration on acyclic fixtures") {
  Rng rng(77);
  for (std::uint64_t seed : {81ull, 82ull, 83ull}) {
    FiniteMdp m = make_random_mdp(6, 2, 3, seed);
    TabularPolicy pi = random_policy(m, rng);
    TabularPolicy qc = random_policy(m, rng);
    ValueFunction v = random_values(m, rng);
    TabularDynamics qd = twist_dynamics(m, v);
    Temperature eta(0.9);
    CHECK(elbo(m, eta, qc, qd, pi) == doctest::Approx(elbo_linear(m, eta, qc, qd, pi)).epsilon(1e-10));
  }
}

TEST_CASE("log_likelihood on the chain") {
  FiniteMdp m = make_chain();
  CHECK(log_likelihood(m, Temperature(1.0), TabularPolicy::uniform(2, 2)) ==
        doctest::Approx(oracle::kSoftTwoPoint).epsilon(1e-12));
}

TEST_CASE("log_likelihood is zero for zero rewards") {
  FiniteMdp m = make_random_mdp(7, 3, 3, 91);
  for (auto& row : m.reward) std::fill(row.begin(), row.end(), 0.0);
  TabularPolicy pi = TabularPolicy::uniform(m.num_states(), m.num_actions());
  CHECK(log_likelihood(m, Temperature(5.0), pi) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("elbo never exceeds the log-likelihood") {
  Rng rng(101);
  for (int rep = 0; rep < 100; ++rep) {
    FiniteMdp m = make_random_mdp(6, 2, 3, 200 + rep);
    TabularPolicy pi = random_policy(m, rng);
    TabularPolicy qc = random_policy(m, rng);
    ValueFunction v = random_values(m, rng);
    TabularDynamics qd = twist_dynamics(m, v);
    Temperature eta(1.0);
    CHECK(elbo(m, eta, qc, qd, pi) <= log_likelihood(m, eta, pi) + 1e-12);
  }
}

TEST_CASE("twisting matches the projected-gradient simplex maximizer") {
  Rng rng(111);
  for (int rep = 0; rep < 30; ++rep) {
    FiniteMdp m = make_random_mdp(6, 4, 3, 300 + rep);
    TabularPolicy pi = random_policy(m, rng);
    ValueFunction v = random_values(m, rng);
    Temperature eta(1.0);
    auto q = q_from_v(m, eta, v);
    auto qc = twist_policy(m, pi, q);
    auto soft = softmax_value(m, pi, q);
    for (int x : m.nonterminal_states()) {
      auto best = oracle::maximize_twisted_objective(q.q[x], pi.probs[x]);
      CHECK(best.value == doctest::Approx(soft.v[x]).epsilon(1e-6));
      for (int a = 0; a < m.num_actions(); ++a)
        CHECK(std::abs(best.arg[a] - qc.probs[x][a]) < 1e-6);
    }
    // dynamics direction on one state-action
    auto qd = twist_dynamics(m, v);
    int x = m.nonterminal_states()[0];
    auto best = oracle::maximize_twisted_objective(v.v, m.transition[x][0]);
    double lse = q.q[x][0] - eta.eta * m.reward[x][0];
    CHECK(best.value == doctest::Approx(lse).epsilon(1e-6));
    for (int y = 0; y < m.num_states(); ++y)
      CHECK(std::abs(best.arg[y] - qd.probs[x][0][y]) < 1e-6);
  }
}

TEST_CASE("shift covariance of twisting and the softmax value") {
  Rng rng(121);
  FiniteMdp m = make_random_mdp(6, 3, 3, 400);
  TabularPolicy pi = random_policy(m, rng);
  ActionValueFunction q = ActionValueFunction::zeros(m.num_states(), m.num_actions());
  for (int x : m.nonterminal_states())
    for (int a = 0; a < m.num_actions(); ++a) q.q[x][a] = uniform_real(rng, -2.0, 2.0);
  ActionValueFunction shifted = q;
  std::vector<double> c(m.num_states(), 0.0);
  for (int x : m.nonterminal_states()) {
    c[x] = uniform_real(rng, -1.0, 1.0);
    for (int a = 0; a < m.num_actions(); ++a) shifted.q[x][a] += c[x];
  }
  auto qc1 = twist_policy(m, pi, q);
  auto qc2 = twist_policy(m, pi, shifted);
  for (int x : m.nonterminal_states())
    for (int a = 0; a < m.num_actions(); ++a)
      CHECK(qc1.probs[x][a] == doctest::Approx(qc2.probs[x][a]).epsilon(1e-14));
  auto v1 = softmax_value(m, pi, q);
  auto v2 = softmax_value(m, pi, shifted);
  for (int x : m.nonterminal_states())
    CHECK(v2.v[x] == doctest::Approx(v1.v[x] + c[x]).epsilon(1e-12));
}

TEST_CASE("operators are monotone") {
  Rng rng(131);
  for (int rep = 0; rep < 100; ++rep) {
    FiniteMdp m = make_random_mdp(5, 2, 3, 500 + rep);
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
    for (int x : m.nonterminal_states()) {
      CHECK(tv.v[x] <= tw.v[x] + 1e-12);
      CHECK(iv.v[x] <= iw.v[x] + 1e-12);
    }
  }
}
