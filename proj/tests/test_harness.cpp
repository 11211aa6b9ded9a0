#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vmbpo/checks.hpp"
#include "vmbpo/envs.hpp"
#include "vmbpo/harness.hpp"
#include "vmbpo/kvdoc.hpp"

using namespace vmbpo;

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("vmbpo_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("key-value documents parse comments, sections, and lists") {
  auto doc = KeyValueDoc::parse_string(
      "# a comment\n"
      "solve.eta = 1.5\n"
      "mdp.kind = chain   # trailing comment\n"
      "seeds = 1 2 3\n"
      "flag = true\n");
  CHECK(doc.get_real("solve.eta") == 1.5);
  CHECK(doc.get_string("mdp.kind") == "chain");
  CHECK(doc.get_ints("seeds") == std::vector<long>{1, 2, 3});
  CHECK(doc.get_bool("flag", false));
  CHECK(doc.get_real("absent", 2.5) == 2.5);
  CHECK_THROWS_AS(doc.get_real("mdp.kind"), ConfigError);
  CHECK_THROWS_AS(doc.get_string("missing"), ConfigError);
  CHECK_THROWS_AS(KeyValueDoc::parse_string("no equals sign"), ConfigError);
}

TEST_CASE("documents serialize deterministically and round-trip") {
  KeyValueDoc doc;
  doc.set_real("b.x", 0.1);
  doc.set("a.name", "hello");
  doc.set_reals("c.list", std::vector<double>{1.0 / 3.0, 2.0});
  std::string text = doc.serialize();
  auto again = KeyValueDoc::parse_string(text);
  CHECK(again.serialize() == text);
  CHECK(again.get_reals("c.list")[0] == 1.0 / 3.0);  // 17 digits round-trip
}

TEST_CASE("mdp documents round-trip bit-exactly") {
  FiniteMdp m = make_random_mdp(8, 3, 4, 77);
  auto doc = mdp_to_doc(m);
  FiniteMdp back = mdp_from_doc(doc);
  REQUIRE(back.num_states() == m.num_states());
  CHECK(back.states == m.states);
  CHECK(back.terminal == m.terminal);
  for (int x = 0; x < m.num_states(); ++x)
    for (int a = 0; a < m.num_actions(); ++a) {
      CHECK(back.reward[x][a] == m.reward[x][a]);
      for (int y = 0; y < m.num_states(); ++y)
        CHECK(back.transition[x][a][y] == m.transition[x][a][y]);
    }
  CHECK(validate(back).empty());
}

TEST_CASE("mdp files load through the config surface") {
  TempDir dir("mdpfile");
  FiniteMdp m = make_gridworld(3);
  save_mdp((dir.path / "grid.kv").string(), m);
  KeyValueDoc cfg;
  cfg.set("mdp.kind", "file");
  cfg.set("mdp.file", (dir.path / "grid.kv").string());
  FiniteMdp loaded = mdp_from_config(cfg, {});
  CHECK(loaded.num_states() == 9);
  CHECK(validate(loaded).empty());
}

TEST_CASE("solve writes converged tables for the chain") {
  TempDir dir("solve");
  auto cfg = KeyValueDoc::parse_string("mdp.kind = chain\nsolve.iterations = 1\n");
  std::ostringstream diag;
  int rc = cmd_solve(cfg, dir.str(), {}, diag);
  REQUIRE(rc == kExitOk);
  auto sol = KeyValueDoc::parse_file((dir.path / "solution.kv").string());
  CHECK(sol.get_real("value.s0") == doctest::Approx(0.62011450695827751).epsilon(1e-8));
  CHECK(sol.get_reals("variational_policy.s0")[0] ==
        doctest::Approx(0.7310585786300049).epsilon(1e-8));
  std::string csv = slurp(dir.path / "em_iterations.csv");
  CHECK(csv.find("iteration,residual,elbo,log_likelihood") == 0);
}

TEST_CASE("solve rejects a non-positive tolerance and names the field") {
  TempDir dir("badtol");
  auto cfg = KeyValueDoc::parse_string("mdp.kind = chain\nsolve.tolerance = 0\n");
  std::ostringstream diag;
  CHECK(cmd_solve(cfg, dir.str(), {}, diag) == kExitConfig);
  CHECK(diag.str().find("solve.tolerance") != std::string::npos);
}

TEST_CASE("solve output is byte-identical across repeat runs") {
  TempDir a("solve_a"), b("solve_b");
  auto cfg = KeyValueDoc::parse_string(
      "mdp.kind = random\nmdp.states = 7\nmdp.actions = 2\nmdp.layers = 3\nmdp.seed = 5\n"
      "solve.iterations = 4\n");
  std::ostringstream diag;
  REQUIRE(cmd_solve(cfg, a.str(), {}, diag) == kExitOk);
  REQUIRE(cmd_solve(cfg, b.str(), {}, diag) == kExitOk);
  CHECK(slurp(a.path / "em_iterations.csv") == slurp(b.path / "em_iterations.csv"));
  CHECK(slurp(a.path / "solution.kv") == slurp(b.path / "solution.kv"));
}

TEST_CASE("train with zero steps yields a header-only metrics file") {
  TempDir dir("train0");
  auto cfg = KeyValueDoc::parse_string(
      "train.env = chain\ntrain.total_steps = 0\nseeds = 4\ntrain.discount = 1.0\n");
  std::ostringstream diag;
  REQUIRE(cmd_train(cfg, dir.str(), {}, diag) == kExitOk);
  std::string csv = slurp(dir.path / "metrics_seed4.csv");
  CHECK(csv ==
        "wall_step,env_steps,mean_return,return_sd,elbo_estimate,"
        "loss_dynamics,loss_nu,loss_q,loss_v,loss_actor\n");
}

TEST_CASE("train writes one metrics file per seed plus a summary") {
  TempDir dir("train3");
  auto cfg = KeyValueDoc::parse_string(
      "train.env = chain\ntrain.total_steps = 600\ntrain.collect_per_round = 100\n"
      "train.batch_model = 32\ntrain.batch_ac = 16\ntrain.e_step_iters = 3\n"
      "train.synthetic_per_iter = 128\ntrain.eval_interval = 300\ntrain.discount = 1.0\n");
  std::ostringstream diag;
  REQUIRE(cmd_train(cfg, dir.str(), {1, 2, 3}, diag) == kExitOk);
  CHECK(fs::exists(dir.path / "metrics_seed1.csv"));
  CHECK(fs::exists(dir.path / "metrics_seed2.csv"));
  CHECK(fs::exists(dir.path / "metrics_seed3.csv"));
  CHECK(fs::exists(dir.path / "params_seed2.bin"));
  std::string summary = slurp(dir.path / "summary.csv");
  CHECK(summary.find("final_return_mean") != std::string::npos);
  CHECK(summary.find("final_return_sd") != std::string::npos);
}

TEST_CASE("metrics are byte-identical across repeat runs with the same seed") {
  TempDir a("train_a"), b("train_b");
  auto cfg = KeyValueDoc::parse_string(
      "train.env = chain\ntrain.total_steps = 800\ntrain.collect_per_round = 100\n"
      "train.batch_model = 32\ntrain.batch_ac = 16\ntrain.e_step_iters = 3\n"
      "train.synthetic_per_iter = 128\ntrain.eval_interval = 200\ntrain.discount = 1.0\n");
  std::ostringstream diag;
  REQUIRE(cmd_train(cfg, a.str(), {7}, diag) == kExitOk);
  REQUIRE(cmd_train(cfg, b.str(), {7}, diag) == kExitOk);
  CHECK(slurp(a.path / "metrics_seed7.csv") == slurp(b.path / "metrics_seed7.csv"));
  CHECK(slurp(a.path / "params_seed7.bin") == slurp(b.path / "params_seed7.bin"));
}

TEST_CASE("train rejects unknown environments and algorithms") {
  TempDir dir("trainbad");
  std::ostringstream diag;
  CHECK(cmd_train(KeyValueDoc::parse_string("train.env = mars\n"), dir.str(), {}, diag) ==
        kExitConfig);
  CHECK(cmd_train(KeyValueDoc::parse_string("train.algorithm = sarsa\n"), dir.str(), {}, diag) ==
        kExitConfig);
  CHECK(cmd_train(KeyValueDoc::parse_string("train.env = chain\ntrain.synthetic_per_iter = 100\n"),
                  dir.str(), {}, diag) == kExitConfig);
}

TEST_CASE("check passes on a fresh build and is reproducible") {
  std::ostringstream diag1, diag2;
  KeyValueDoc cfg;
  REQUIRE(cmd_check(cfg, ".", {1}, diag1) == kExitOk);
  REQUIRE(cmd_check(cfg, ".", {1}, diag2) == kExitOk);
  CHECK(diag1.str() == diag2.str());
  CHECK(diag1.str().find("ok twist_policy_maximizer") != std::string::npos);
}

TEST_CASE("corrupting the twisted policy trips its named check") {
  auto cfg = KeyValueDoc::parse_string("check.corrupt_twist_policy = true\n");
  std::ostringstream diag;
  CHECK(cmd_check(cfg, ".", {1}, diag) == kExitCheckFailed);
  CHECK(diag.str().find("FAIL twist_policy_maximizer") != std::string::npos);
}

TEST_CASE("the gamma key routes through the discount transform") {
  KeyValueDoc cfg;
  cfg.set("mdp.kind", "chain");
  cfg.set("mdp.gamma", "0.9");
  FiniteMdp m = mdp_from_config(cfg, {});
  CHECK(m.transition[0][0][1] == doctest::Approx(1.0));  // already terminal-bound
  cfg.set("mdp.gamma", "1.5");
  CHECK_THROWS_AS(mdp_from_config(cfg, {}), ConfigError);
}
