#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vmbpo {

using Rng = std::mt19937_64;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Iterative solve exhausted its sweep budget; carries the last residual.
class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Trajectory enumeration exceeded its node budget.
class EnumerationBudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stopping time is not almost-surely finite (absorbing cycle, singular
/// evaluation system, or a sampled rollout hitting the step cap).
class TransienceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A distribution places mass where its reference has none.
class SupportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient in a sampled update; carries the step index.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, long step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
  long step() const { return step_; }

 private:
  long step_ = -1;
};

/// Max-shifted log(sum_i exp(args[i])). Empty input yields -inf.
inline double log_sum_exp(std::span<const double> args) {
  if (args.empty()) return kNegInf;
  double m = kNegInf;
  for (double a : args) m = std::max(m, a);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double a : args) s += std::exp(a - m);
  return m + std::log(s);
}

/// Draws an index proportional to probs (assumed to sum to ~1).
inline int sample_categorical(std::span<const double> probs, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  double acc = 0.0;
  int last_positive = -1;
  for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = i;
    acc += probs[i];
    if (u < acc) return i;
  }
  if (last_positive < 0) throw std::invalid_argument("sample_categorical: all-zero row");
  return last_positive;
}

inline double uniform_real(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> unif(lo, hi);
  return unif(rng);
}

}  // namespace vmbpo
