#include "vmbpo/envs.hpp"

#include <algorithm>
#include <cmath>

namespace vmbpo {

namespace {

FiniteMdp blank_mdp(std::vector<std::string> states, std::vector<std::string> actions) {
  FiniteMdp m;
  m.states = std::move(states);
  m.actions = std::move(actions);
  int nx = m.num_states();
  int na = m.num_actions();
  m.terminal.assign(nx, false);
  m.reward.assign(nx, std::vector<double>(na, 0.0));
  m.transition.assign(nx, std::vector<std::vector<double>>(na, std::vector<double>(nx, 0.0)));
  m.initial.assign(nx, 0.0);
  return m;
}

// Terminal rows self-loop so the stored tables stay row-stochastic; they are
// never read.
void close_terminal_rows(FiniteMdp& m) {
  for (int x = 0; x < m.num_states(); ++x) {
    if (!m.terminal[x]) continue;
    for (int a = 0; a < m.num_actions(); ++a) {
      std::fill(m.transition[x][a].begin(), m.transition[x][a].end(), 0.0);
      m.transition[x][a][x] = 1.0;
      m.reward[x][a] = 0.0;
    }
  }
}

double wrap_angle(double th) {
  th = std::fmod(th + M_PI, 2.0 * M_PI);
  if (th < 0) th += 2.0 * M_PI;
  return th - M_PI;
}

}  // namespace

FiniteMdp make_chain() {
  FiniteMdp m = blank_mdp({"s0", "term"}, {"a0", "a1"});
  m.terminal[1] = true;
  m.reward[0][0] = 1.0;
  m.reward[0][1] = 0.0;
  m.transition[0][0][1] = 1.0;
  m.transition[0][1][1] = 1.0;
  m.initial[0] = 1.0;
  close_terminal_rows(m);
  return m;
}

FiniteMdp make_twist_pair() {
  FiniteMdp m = blank_mdp({"s0", "g", "b", "term"}, {"a0"});
  m.terminal[3] = true;
  m.transition[0][0][1] = 0.5;
  m.transition[0][0][2] = 0.5;
  m.transition[1][0][3] = 1.0;
  m.transition[2][0][3] = 1.0;
  m.initial[0] = 1.0;
  close_terminal_rows(m);
  return m;
}

FiniteMdp make_gridworld(int n) {
  if (n < 2) throw std::invalid_argument("make_gridworld: need n >= 2");
  const int cells = n * n;
  std::vector<std::string> names(cells);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) names[r * n + c] = "c" + std::to_string(r) + "_" + std::to_string(c);
  FiniteMdp m = blank_mdp(std::move(names), {"up", "down", "left", "right"});
  const int goal = cells - 1;
  m.terminal[goal] = true;
  m.initial[0] = 1.0;
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      int x = r * n + c;
      if (m.terminal[x]) continue;
      for (int a = 0; a < 4; ++a) {
        int rr = std::clamp(r + dr[a], 0, n - 1);
        int cc = std::clamp(c + dc[a], 0, n - 1);
        int y = rr * n + cc;
        m.transition[x][a][y] = 1.0;
        m.reward[x][a] = -0.01 + (y == goal ? 1.0 : 0.0);
      }
    }
  close_terminal_rows(m);
  return m;
}

FiniteMdp make_random_mdp(int n_states, int n_actions, int layers, std::uint64_t seed) {
  if (n_states < layers + 1 || n_states > 12)
    throw std::invalid_argument("make_random_mdp: need layers < n_states <= 12");
  if (layers < 1 || n_actions < 1) throw std::invalid_argument("make_random_mdp: bad shape");
  Rng rng(seed);

  // Layer 0 is a single root (deterministic start); remaining nonterminals
  // split over layers 1..layers-1; one terminal appended.
  std::vector<std::vector<int>> layer_states(layers);
  layer_states[0] = {0};
  int next_id = 1;
  int remaining = n_states - 1;
  for (int l = 1; l < layers; ++l) {
    int width = remaining / (layers - l);
    width = std::max(1, width);
    for (int i = 0; i < width; ++i) layer_states[l].push_back(next_id++);
    remaining -= width;
  }
  const int terminal_id = next_id;
  const int total = terminal_id + 1;

  std::vector<std::string> names(total);
  for (int i = 0; i < total - 1; ++i) names[i] = "x" + std::to_string(i);
  names[total - 1] = "term";
  std::vector<std::string> action_names(n_actions);
  for (int a = 0; a < n_actions; ++a) action_names[a] = "a" + std::to_string(a);

  FiniteMdp m = blank_mdp(std::move(names), std::move(action_names));
  m.terminal[terminal_id] = true;
  m.initial[0] = 1.0;

  for (int l = 0; l < layers; ++l) {
    std::vector<int> successors =
        (l + 1 < layers) ? layer_states[l + 1] : std::vector<int>{terminal_id};
    for (int x : layer_states[l]) {
      for (int a = 0; a < n_actions; ++a) {
        m.reward[x][a] = uniform_real(rng, -1.0, 1.0);
        int fanout = 1 + static_cast<int>(rng() % std::min<std::size_t>(3, successors.size()));
        std::vector<int> picks = successors;
        std::shuffle(picks.begin(), picks.end(), rng);
        picks.resize(fanout);
        double z = 0.0;
        std::vector<double> w(fanout);
        for (int i = 0; i < fanout; ++i) {
          w[i] = uniform_real(rng, 0.1, 1.0);
          z += w[i];
        }
        for (int i = 0; i < fanout; ++i) m.transition[x][a][picks[i]] = w[i] / z;
      }
    }
  }
  close_terminal_rows(m);
  require_valid(m);
  return m;
}

std::array<double, PendulumEnv::kObsDim> PendulumEnv::observation() const {
  return {std::cos(theta_), std::sin(theta_), theta_dot_};
}

std::array<double, PendulumEnv::kObsDim> PendulumEnv::reset(Rng& rng) {
  theta_ = uniform_real(rng, -M_PI, M_PI);
  theta_dot_ = uniform_real(rng, -1.0, 1.0);
  steps_ = 0;
  return observation();
}

double PendulumEnv::reward(const std::array<double, kObsDim>& obs, double torque) {
  double th = std::atan2(obs[1], obs[0]);
  double u = std::clamp(torque, -kMaxTorque, kMaxTorque);
  return -(th * th + 0.1 * obs[2] * obs[2] + 0.001 * u * u);
}

PendulumEnv::StepResult PendulumEnv::step(double torque) {
  constexpr double g = 10.0, m = 1.0, l = 1.0, dt = 0.05;
  double u = std::clamp(torque, -kMaxTorque, kMaxTorque);
  double r = -(theta_ * theta_ + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u);
  double acc = 3.0 * g / (2.0 * l) * std::sin(theta_) + 3.0 / (m * l * l) * u;
  theta_dot_ = std::clamp(theta_dot_ + dt * acc, -kMaxSpeed, kMaxSpeed);
  theta_ = wrap_angle(theta_ + dt * theta_dot_);
  ++steps_;
  return {observation(), r, false, steps_ >= kEpisodeCap};
}

}  // namespace vmbpo
