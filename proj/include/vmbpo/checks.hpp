#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vmbpo {

struct CheckOptions {
  std::uint64_t seed = 1;
  // fault-injection hook: perturbs the twisted policy inside its maximizer
  // check, which must then fail by name
  bool corrupt_twist_policy = false;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Cross-module invariant suite: twisted closed forms against a numeric
/// simplex maximizer, operator monotonicity, solver agreement, the
/// bound between the variational objective and the likelihood, gradient
/// finite differences, and the sampled-update fixed points. Seeded and
/// reproducible.
std::vector<CheckResult> run_invariant_checks(const CheckOptions& opts);

}  // namespace vmbpo
