#pragma once

#include <cstdint>
#include <ostream>

#include "vmbpo/kvdoc.hpp"

namespace vmbpo {

/// Exit codes shared by every command: 0 success, 2 configuration error,
/// 3 numerical abort or non-convergence, 4 check failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitCheckFailed = 4;

/// Exact EM solve on a finite MDP; writes per-iteration records and the
/// final policy/value tables under out_dir.
int cmd_solve(const KeyValueDoc& config, const std::string& out_dir,
              const std::vector<std::uint64_t>& seeds, std::ostream& diag);

/// Sampled training (algorithm selected by config); one metrics CSV and one
/// parameter checkpoint per seed plus a cross-seed summary.
int cmd_train(const KeyValueDoc& config, const std::string& out_dir,
              const std::vector<std::uint64_t>& seeds, std::ostream& diag);

/// Runs the invariant suite; prints one line per named check.
int cmd_check(const KeyValueDoc& config, const std::string& out_dir,
              const std::vector<std::uint64_t>& seeds, std::ostream& diag);

/// Builds the MDP selected by the `mdp.*` keys (fixtures, generators, or an
/// MDP document) and applies the optional discount transform.
FiniteMdp mdp_from_config(const KeyValueDoc& config, const std::vector<std::uint64_t>& seeds);

}  // namespace vmbpo
