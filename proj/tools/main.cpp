#include <CLI11.hpp>
#include <iostream>

#include "vmbpo/harness.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t comma = csv.find(',', pos);
    if (comma == std::string::npos) comma = csv.size();
    std::string tok = csv.substr(pos, comma - pos);
    if (!tok.empty()) out.push_back(std::stoull(tok));
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EM-style variational policy optimization: exact solvers and sampled training"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::string seed_csv;

  auto add_common = [&](CLI::App* cmd, bool config_required) {
    auto* opt = cmd->add_option("--config", config_path, "key = value configuration document");
    if (config_required) opt->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed_csv, "comma-separated seed list (overrides the config)");
  };

  auto* solve = app.add_subcommand("solve", "exact EM solve on a finite MDP");
  add_common(solve, true);
  auto* train = app.add_subcommand("train", "sampled training (vmbpo or vmbpo_mfe)");
  add_common(train, true);
  auto* check = app.add_subcommand("check", "run the invariant suite");
  add_common(check, false);

  CLI11_PARSE(app, argc, argv);

  std::vector<std::uint64_t> seeds;
  try {
    seeds = parse_seeds(seed_csv);
  } catch (const std::exception&) {
    std::cerr << "configuration error: cannot parse --seed list '" << seed_csv << "'\n";
    return vmbpo::kExitConfig;
  }

  vmbpo::KeyValueDoc config;
  if (!config_path.empty()) {
    try {
      config = vmbpo::KeyValueDoc::parse_file(config_path);
    } catch (const std::exception& e) {
      std::cerr << "configuration error: " << e.what() << "\n";
      return vmbpo::kExitConfig;
    }
  }

  if (solve->parsed()) return vmbpo::cmd_solve(config, out_dir, seeds, std::cerr);
  if (train->parsed()) return vmbpo::cmd_train(config, out_dir, seeds, std::cerr);
  return vmbpo::cmd_check(config, out_dir, seeds, std::cout);
}
