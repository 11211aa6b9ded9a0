#include "vmbpo/harness.hpp"

#include <cmath>
#include <filesystem>

#include "vmbpo/checks.hpp"
#include "vmbpo/gaussian_nets.hpp"
#include "vmbpo/solvers.hpp"
#include "vmbpo/tabular_nets.hpp"
#include "vmbpo/trainer.hpp"

namespace vmbpo {

namespace {

namespace fs = std::filesystem;

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory: " + dir);
}

double require_positive(const KeyValueDoc& cfg, const std::string& key, double fallback) {
  double v = cfg.get_real(key, fallback);
  if (!(v > 0.0)) throw ConfigError("key '" + key + "' must be positive");
  return v;
}

long require_positive_int(const KeyValueDoc& cfg, const std::string& key, long fallback) {
  long v = cfg.get_int(key, fallback);
  if (v <= 0) throw ConfigError("key '" + key + "' must be positive");
  return v;
}

SolverConfig solver_config(const KeyValueDoc& cfg) {
  SolverConfig out;
  out.tolerance = require_positive(cfg, "solve.tolerance", 1e-10);
  out.max_sweeps = static_cast<int>(require_positive_int(cfg, "solve.max_sweeps", 100000));
  std::string mode = cfg.get_string("solve.improvement", "closed_form");
  if (mode == "closed_form")
    out.improvement_mode = ImprovementMode::closed_form;
  else if (mode == "kl_projection")
    out.improvement_mode = ImprovementMode::kl_projection;
  else
    throw ConfigError("key 'solve.improvement' must be closed_form or kl_projection");
  return out;
}

EStepAlgo e_step_algo(const KeyValueDoc& cfg) {
  std::string name = cfg.get_string("solve.algorithm", "vi_model_free");
  if (name == "vi_model_free") return EStepAlgo::vi_model_free;
  if (name == "vi_model_based") return EStepAlgo::vi_model_based;
  if (name == "pi_model_based") return EStepAlgo::pi_model_based;
  if (name == "pi_model_free") return EStepAlgo::pi_model_free;
  throw ConfigError("key 'solve.algorithm' names an unknown E-step algorithm");
}

TrainConfig train_config(const KeyValueDoc& cfg) {
  TrainConfig out;
  out.total_steps = cfg.get_int("train.total_steps", 20000);
  if (out.total_steps < 0) throw ConfigError("key 'train.total_steps' must be >= 0");
  out.collect_per_round =
      static_cast<int>(require_positive_int(cfg, "train.collect_per_round", 250));
  out.e_step_iters = static_cast<int>(require_positive_int(cfg, "train.e_step_iters", 20));
  out.batch_ac = static_cast<int>(require_positive_int(cfg, "train.batch_ac", 64));
  out.batch_model = static_cast<int>(require_positive_int(cfg, "train.batch_model", 256));
  out.synthetic_per_iter =
      static_cast<int>(require_positive_int(cfg, "train.synthetic_per_iter", 256));
  out.lr_model = require_positive(cfg, "train.lr_model", 3e-4);
  out.lr_critic = require_positive(cfg, "train.lr_critic", 5e-4);
  out.lr_actor = require_positive(cfg, "train.lr_actor", 2e-4);
  out.tau = require_positive(cfg, "train.tau", 0.005);
  out.eta = require_positive(cfg, "train.eta", 1.0);
  out.discount = require_positive(cfg, "train.discount", 0.99);
  out.lambda = cfg.get_real("train.lambda", 0.0);
  std::string m_mode = cfg.get_string("train.m_step", "copy");
  if (m_mode == "copy")
    out.m_step_mode = MStepMode::copy;
  else if (m_mode == "map")
    out.m_step_mode = MStepMode::map;
  else
    throw ConfigError("key 'train.m_step' must be copy or map");
  out.grad_steps_model =
      static_cast<int>(require_positive_int(cfg, "train.grad_steps_model", 1));
  out.grad_steps_critic =
      static_cast<int>(require_positive_int(cfg, "train.grad_steps_critic", 1));
  out.grad_steps_actor =
      static_cast<int>(require_positive_int(cfg, "train.grad_steps_actor", 1));
  out.eval_interval = require_positive_int(cfg, "train.eval_interval", 1000);
  out.eval_episodes = static_cast<int>(require_positive_int(cfg, "train.eval_episodes", 5));
  out.buffer_capacity =
      static_cast<std::size_t>(require_positive_int(cfg, "train.buffer_capacity", 1000000));
  out.tau_exp = require_positive(cfg, "train.tau_exp", 1.0);
  out.model_twist_temp = require_positive(cfg, "train.model_twist_temp", 1.0);
  out.smoothing_window = static_cast<int>(require_positive_int(cfg, "train.smoothing_window", 3));
  out.episode_cap = static_cast<int>(require_positive_int(cfg, "train.episode_cap", 500));
  out.explore_sigma = cfg.get_real("train.explore_sigma", 1.0);
  out.explore_decay = cfg.get_real("train.explore_decay", 0.999);
  out.explore_min = cfg.get_real("train.explore_min", 0.025);
  try {
    out.require_valid();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train configuration: ") + e.what());
  }
  return out;
}

std::vector<int> hidden_sizes(const KeyValueDoc& cfg) {
  std::vector<int> hidden;
  if (cfg.has("train.hidden")) {
    for (long h : cfg.get_ints("train.hidden")) {
      if (h <= 0) throw ConfigError("key 'train.hidden' entries must be positive");
      hidden.push_back(static_cast<int>(h));
    }
  } else {
    hidden = {64, 64};
  }
  return hidden;
}

std::vector<std::uint64_t> seed_list(const KeyValueDoc& cfg,
                                     const std::vector<std::uint64_t>& override_seeds) {
  if (!override_seeds.empty()) return override_seeds;
  if (cfg.has("seeds")) {
    std::vector<std::uint64_t> out;
    for (long s : cfg.get_ints("seeds")) {
      if (s < 0) throw ConfigError("key 'seeds' entries must be nonnegative");
      out.push_back(static_cast<std::uint64_t>(s));
    }
    if (out.empty()) throw ConfigError("key 'seeds' must name at least one seed");
    return out;
  }
  return {0};
}

std::string metrics_name(std::uint64_t seed) {
  return "metrics_seed" + std::to_string(seed) + ".csv";
}

MetricsSink csv_sink(CsvWriter& csv) {
  return [&csv](const MetricsRow& row) {
    if (row.env_steps == 0) return;  // the pre-training point stays in memory
    csv.row({std::to_string(row.wall_step), std::to_string(row.env_steps),
             format_real(row.mean_return), format_real(row.return_sd),
             format_real(row.elbo_estimate), format_real(row.loss_dynamics),
             format_real(row.loss_nu), format_real(row.loss_q), format_real(row.loss_v),
             format_real(row.loss_actor)});
  };
}

template <class Runner>
int run_train_seeds(const KeyValueDoc& cfg, const std::string& out_dir,
                    const std::vector<std::uint64_t>& seeds, std::ostream& diag, Runner&& runner) {
  std::vector<double> finals;
  for (std::uint64_t seed : seeds) {
    CsvWriter csv(join(out_dir, metrics_name(seed)),
                  {"wall_step", "env_steps", "mean_return", "return_sd", "elbo_estimate",
                   "loss_dynamics", "loss_nu", "loss_q", "loss_v", "loss_actor"});
    TrainResult result = runner(seed, csv_sink(csv));
    csv.close();
    finals.push_back(result.final_smoothed_return);
    diag << "seed " << seed << ": final smoothed return " << format_real(result.final_smoothed_return)
         << "\n";
  }
  double mean = 0.0;
  for (double f : finals) mean += f;
  mean /= finals.size();
  double var = 0.0;
  for (double f : finals) var += (f - mean) * (f - mean);
  double sd = std::sqrt(var / finals.size());

  CsvWriter summary(join(out_dir, "summary.csv"), {"statistic", "value"});
  for (std::size_t i = 0; i < seeds.size(); ++i)
    summary.row({"final_return_seed" + std::to_string(seeds[i]), format_real(finals[i])});
  summary.row({"final_return_mean", format_real(mean)});
  summary.row({"final_return_sd", format_real(sd)});
  summary.close();
  (void)cfg;
  return kExitOk;
}

}  // namespace

FiniteMdp mdp_from_config(const KeyValueDoc& cfg, const std::vector<std::uint64_t>& seeds) {
  std::string kind = cfg.get_string("mdp.kind", "chain");
  FiniteMdp m;
  if (kind == "chain") {
    m = make_chain();
  } else if (kind == "twist_pair") {
    m = make_twist_pair();
  } else if (kind == "gridworld") {
    m = make_gridworld(static_cast<int>(require_positive_int(cfg, "mdp.grid_n", 3)));
  } else if (kind == "random") {
    std::uint64_t seed = seeds.empty()
                             ? static_cast<std::uint64_t>(cfg.get_int("mdp.seed", 1))
                             : seeds.front();
    m = make_random_mdp(static_cast<int>(require_positive_int(cfg, "mdp.states", 8)),
                        static_cast<int>(require_positive_int(cfg, "mdp.actions", 3)),
                        static_cast<int>(require_positive_int(cfg, "mdp.layers", 4)), seed);
  } else if (kind == "file") {
    m = load_mdp(cfg.get_string("mdp.file"));
  } else {
    throw ConfigError("key 'mdp.kind' names an unknown fixture: " + kind);
  }
  if (cfg.has("mdp.gamma")) {
    double gamma = cfg.get_real("mdp.gamma");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("key 'mdp.gamma' must lie in (0,1)");
    m = discount_transform(m, gamma);
  }
  auto diags = validate(m);
  if (!diags.empty()) throw ConfigError("configured MDP is invalid: " + diags.front());
  return m;
}

int cmd_solve(const KeyValueDoc& cfg, const std::string& out_dir,
              const std::vector<std::uint64_t>& seeds, std::ostream& diag) {
  try {
    ensure_dir(out_dir);
    FiniteMdp m = mdp_from_config(cfg, seeds);
    Temperature eta(require_positive(cfg, "solve.eta", 1.0));
    int iterations = static_cast<int>(require_positive_int(cfg, "solve.iterations", 10));
    double lambda = cfg.get_real("solve.lambda", 0.0);
    if (lambda < 0.0) throw ConfigError("key 'solve.lambda' must be >= 0");
    SolverConfig scfg = solver_config(cfg);
    EStepAlgo algo = e_step_algo(cfg);
    TabularPolicy pi0 = TabularPolicy::uniform(m.num_states(), m.num_actions());

    auto records = em_solve(m, eta, pi0, iterations, lambda, scfg, algo);

    CsvWriter csv(join(out_dir, "em_iterations.csv"),
                  {"iteration", "residual", "elbo", "log_likelihood"});
    for (const auto& rec : records)
      csv.row({std::to_string(rec.iteration), format_real(rec.e_step.residual),
               format_real(rec.elbo_value), format_real(rec.log_likelihood_value)});
    csv.close();

    const auto& last = records.back();
    KeyValueDoc solution;
    solution.set_int("iterations", records.size());
    solution.set_real("residual", last.e_step.residual);
    solution.set_real("elbo", last.elbo_value);
    solution.set_real("log_likelihood", last.log_likelihood_value);
    for (int x = 0; x < m.num_states(); ++x) {
      solution.set_reals("policy." + m.states[x], last.baseline.probs[x]);
      solution.set_reals("variational_policy." + m.states[x], last.e_step.q_c_star.probs[x]);
      solution.set_real("value." + m.states[x], last.e_step.v_pi.v[x]);
      solution.set_reals("q_value." + m.states[x], last.e_step.q_pi.q[x]);
    }
    solution.write_file(join(out_dir, "solution.kv"));
    return kExitOk;
  } catch (const ConfigError& e) {
    diag << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    diag << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    diag << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  }
}

int cmd_train(const KeyValueDoc& cfg, const std::string& out_dir,
              const std::vector<std::uint64_t>& seeds_override, std::ostream& diag) {
  try {
    ensure_dir(out_dir);
    auto seeds = seed_list(cfg, seeds_override);
    TrainConfig tc = train_config(cfg);
    std::string env_name = cfg.get_string("train.env", "chain");
    std::string algorithm = cfg.get_string("train.algorithm", "vmbpo");
    if (algorithm != "vmbpo" && algorithm != "vmbpo_mfe")
      throw ConfigError("key 'train.algorithm' must be vmbpo or vmbpo_mfe");
    bool mfe = algorithm == "vmbpo_mfe";

    if (env_name == "chain" || env_name == "gridworld") {
      FiniteMdp m = env_name == "chain"
                        ? make_chain()
                        : make_gridworld(static_cast<int>(
                              require_positive_int(cfg, "train.grid_n", 3)));
      if (cfg.has("train.gamma")) {
        double gamma = cfg.get_real("train.gamma");
        if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("key 'train.gamma' must lie in (0,1)");
        m = discount_transform(m, gamma);
      }
      return run_train_seeds(cfg, out_dir, seeds, diag,
                             [&](std::uint64_t seed, const MetricsSink& sink) {
        TabularTrainEnv env(m, tc.episode_cap);
        TabularVmbpoNets nets(m);
        TrainResult result = mfe ? train_vmbpo_mfe(env, nets, tc, seed, sink)
                                 : train_vmbpo(env, nets, tc, seed, sink);
        save_checkpoint(join(out_dir, "params_seed" + std::to_string(seed) + ".bin"),
                        nets.checkpoint_layout(), nets.checkpoint_params());
        return result;
      });
    }
    if (env_name == "pendulum") {
      auto hidden = hidden_sizes(cfg);
      return run_train_seeds(cfg, out_dir, seeds, diag,
                             [&](std::uint64_t seed, const MetricsSink& sink) {
        PendulumTrainEnv env;
        Rng init_rng(seed ^ 0x517cc1b727220a95ULL);
        GaussianVmbpoNets nets(PendulumTrainEnv::kObsDim, PendulumTrainEnv::kActDim, hidden,
                               init_rng);
        TrainResult result = mfe ? train_vmbpo_mfe(env, nets, tc, seed, sink)
                                 : train_vmbpo(env, nets, tc, seed, sink);
        save_checkpoint(join(out_dir, "params_seed" + std::to_string(seed) + ".bin"),
                        nets.checkpoint_layout(), nets.checkpoint_params());
        return result;
      });
    }
    throw ConfigError("key 'train.env' names an unknown environment: " + env_name);
  } catch (const ConfigError& e) {
    diag << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    diag << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    diag << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    diag << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  }
}

int cmd_check(const KeyValueDoc& cfg, const std::string& out_dir,
              const std::vector<std::uint64_t>& seeds, std::ostream& diag) {
  (void)out_dir;
  try {
    CheckOptions opts;
    opts.seed = seeds.empty() ? static_cast<std::uint64_t>(cfg.get_int("check.seed", 1))
                              : seeds.front();
    opts.corrupt_twist_policy = cfg.get_bool("check.corrupt_twist_policy", false);
    auto results = run_invariant_checks(opts);
    bool all_ok = true;
    for (const auto& r : results) {
      if (r.passed) {
        diag << "ok " << r.name << "\n";
      } else {
        diag << "FAIL " << r.name << (r.detail.empty() ? "" : " (" + r.detail + ")") << "\n";
        all_ok = false;
      }
    }
    return all_ok ? kExitOk : kExitCheckFailed;
  } catch (const ConfigError& e) {
    diag << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    diag << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace vmbpo
