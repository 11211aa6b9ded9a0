#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vmbpo/envs.hpp"
#include "vmbpo/mdp.hpp"

using namespace vmbpo;

namespace {

// Two nonterminal states cycling into each other, no terminal anywhere.
FiniteMdp make_two_cycle() {
  FiniteMdp m;
  m.states = {"u", "v"};
  m.actions = {"a"};
  m.terminal = {false, false};
  m.reward = {{0.0}, {0.0}};
  m.transition = {{{0.0, 1.0}}, {{1.0, 0.0}}};
  m.initial = {1.0, 0.0};
  return m;
}

// CHAIN2 with each action split across two terminal outcomes.
FiniteMdp make_chain_stochastic() {
  FiniteMdp m;
  m.states = {"s0", "t0", "t1"};
  m.actions = {"a0", "a1"};
  m.terminal = {false, true, true};
  m.reward = {{1.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}};
  m.transition.assign(3, std::vector<std::vector<double>>(2, std::vector<double>(3, 0.0)));
  m.transition[0][0] = {0.0, 0.5, 0.5};
  m.transition[0][1] = {0.0, 0.3, 0.7};
  for (int a = 0; a < 2; ++a) {
    m.transition[1][a][1] = 1.0;
    m.transition[2][a][2] = 1.0;
  }
  m.initial = {1.0, 0.0, 0.0};
  return m;
}

}  // namespace

TEST_CASE("validate accepts the chain fixture") {
  CHECK(validate(make_chain()).empty());
  CHECK(validate(make_twist_pair()).empty());
}

TEST_CASE("validate flags a non-stochastic row") {
  FiniteMdp m = make_chain();
  m.transition[0][0][1] = 0.9;
  auto diags = validate(m);
  REQUIRE(!diags.empty());
  bool found = false;
  for (const auto& d : diags) found |= d.find("row not stochastic") != std::string::npos;
  CHECK(found);
}

TEST_CASE("validate flags an MDP whose cycle never reaches a terminal") {
  auto diags = validate(make_two_cycle());
  REQUIRE(!diags.empty());
  bool found = false;
  for (const auto& d : diags) found |= d.find("not transient") != std::string::npos;
  CHECK(found);
}

TEST_CASE("discount_transform keeps terminal-bound rows terminal-bound") {
  FiniteMdp d = discount_transform(make_chain(), 0.99);
  CHECK(d.transition[0][0][1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(validate(d).empty());
}

TEST_CASE("discount_transform scales a terminal-free cycle and adds sink mass") {
  FiniteMdp d = discount_transform(make_two_cycle(), 0.99);
  REQUIRE(d.num_states() == 3);  // appended sink
  CHECK(d.transition[0][0][1] == doctest::Approx(0.99));
  CHECK(d.transition[0][0][2] == doctest::Approx(0.01));
  CHECK(d.transition[1][0][0] == doctest::Approx(0.99));
  CHECK(validate(d).empty());
}

TEST_CASE("discount_transform rejects gamma outside (0,1)") {
  CHECK_THROWS_AS(discount_transform(make_chain(), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(discount_transform(make_chain(), 0.0), std::invalid_argument);
}

TEST_CASE("two discount transforms compose multiplicatively on surviving mass") {
  FiniteMdp m = make_chain_stochastic();
  // route some mass between nonterminals so composition is visible
  m.transition[0][0] = {0.4, 0.3, 0.3};
  FiniteMdp twice = discount_transform(discount_transform(m, 0.9), 0.8);
  FiniteMdp once = discount_transform(m, 0.72);
  for (int y = 0; y < m.num_states(); ++y) {
    if (m.terminal[y]) continue;
    CHECK(twice.transition[0][0][y] == doctest::Approx(once.transition[0][0][y]).epsilon(1e-12));
  }
}

TEST_CASE("enumerate_trajectories on the chain") {
  auto trajs = enumerate_trajectories(make_chain(), 1);
  CHECK(trajs.size() == 2);
  for (const auto& t : trajs) {
    CHECK(t.length() == 1);
    CHECK(t.final_state == 1);
  }
}

TEST_CASE("enumerate_trajectories branches over stochastic outcomes") {
  auto trajs = enumerate_trajectories(make_chain_stochastic(), 1);
  CHECK(trajs.size() == 4);
}

TEST_CASE("enumeration count matches the recursive path-count oracle") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    FiniteMdp m = make_random_mdp(6, 2, 3, seed);
    auto trajs = enumerate_trajectories(m, 5);
    CHECK(static_cast<long>(trajs.size()) == oracle::count_paths(m, 5));
  }
}

TEST_CASE("enumeration budget is enforced") {
  FiniteMdp m = make_random_mdp(8, 4, 4, 7);
  CHECK_THROWS_AS(enumerate_trajectories(m, 8, 5), EnumerationBudgetError);
}

TEST_CASE("trajectory probabilities sum to one on acyclic fixtures") {
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    FiniteMdp m = make_random_mdp(7, 3, 3, seed);
    Rng rng(seed);
    TabularPolicy pi = TabularPolicy::uniform(m.num_states(), m.num_actions());
    auto trajs = enumerate_trajectories(m, m.num_states());
    double total = 0.0;
    for (const auto& t : trajs) total += std::exp(trajectory_log_prob(m, pi, t));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("trajectory_log_prob on the chain") {
  FiniteMdp m = make_chain();
  Trajectory t{{{0, 0, 1.0}}, 1};
  CHECK(trajectory_log_prob(m, TabularPolicy::uniform(2, 2), t) ==
        doctest::Approx(std::log(0.5)).epsilon(1e-15));
  CHECK(trajectory_log_prob(m, TabularPolicy::deterministic(2, 2, 0), t) == doctest::Approx(0.0));
  Trajectory t1{{{0, 1, 0.0}}, 1};
  CHECK(trajectory_log_prob(m, TabularPolicy::deterministic(2, 2, 0), t1) == kNegInf);
}

TEST_CASE("expected_return on the chain") {
  FiniteMdp m = make_chain();
  CHECK(expected_return(m, TabularPolicy::uniform(2, 2)) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(expected_return(m, TabularPolicy::deterministic(2, 2, 0)) == doctest::Approx(1.0));
}

TEST_CASE("expected_return matches enumeration on random acyclic MDPs") {
  for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
    FiniteMdp m = make_random_mdp(6, 2, 3, seed);
    Rng rng(seed + 100);
    TabularPolicy pi = TabularPolicy::uniform(m.num_states(), m.num_actions());
    auto trajs = enumerate_trajectories(m, m.num_states());
    double by_enum = 0.0;
    for (const auto& t : trajs)
      by_enum += std::exp(trajectory_log_prob(m, pi, t)) * t.total_reward();
    CHECK(expected_return(m, pi) == doctest::Approx(by_enum).epsilon(1e-10));
  }
}

TEST_CASE("expected_return reports non-transience") {
  FiniteMdp m = make_two_cycle();
  // make it pass shape checks by pretending state v is terminal-reachable via
  // a third state; simplest: call the solver directly on the invalid MDP
  CHECK_THROWS(expected_return(m, TabularPolicy::uniform(2, 1)));
}

TEST_CASE("sample_trajectory terminates immediately on the chain") {
  FiniteMdp m = make_chain();
  Trajectory t = sample_trajectory(m, TabularPolicy::uniform(2, 2), 42ull);
  CHECK(t.length() == 1);
  Trajectory t0 = sample_trajectory(m, TabularPolicy::deterministic(2, 2, 0), 43ull);
  REQUIRE(t0.length() == 1);
  CHECK(t0.steps[0].reward == doctest::Approx(1.0));
}

TEST_CASE("sampled action frequency stays within the binomial 3-sigma band") {
  FiniteMdp m = make_chain();
  TabularPolicy pi = TabularPolicy::uniform(2, 2);
  Rng rng(7);
  const int n = 100000;
  int count_a0 = 0;
  for (int i = 0; i < n; ++i) {
    Trajectory t = sample_trajectory(m, pi, rng);
    count_a0 += t.steps[0].action == 0;
  }
  double sigma = std::sqrt(0.25 * n);
  CHECK(std::abs(count_a0 - 0.5 * n) < 3.0 * sigma);
}

TEST_CASE("sample_trajectory is deterministic given the seed") {
  FiniteMdp m = make_random_mdp(8, 3, 4, 5);
  TabularPolicy pi = TabularPolicy::uniform(m.num_states(), m.num_actions());
  Trajectory a = sample_trajectory(m, pi, 99ull);
  Trajectory b = sample_trajectory(m, pi, 99ull);
  REQUIRE(a.length() == b.length());
  for (int i = 0; i < a.length(); ++i) {
    CHECK(a.steps[i].state == b.steps[i].state);
    CHECK(a.steps[i].action == b.steps[i].action);
  }
}

TEST_CASE("optimal return references") {
  CHECK(optimal_expected_return(make_chain()) == doctest::Approx(1.0));
  // shortest path in the 3x3 gridworld is 4 moves
  CHECK(optimal_expected_return(make_gridworld(3)) == doctest::Approx(1.0 - 0.01 * 4).epsilon(1e-12));
}
