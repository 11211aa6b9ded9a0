#pragma once

#include <span>
#include <string>
#include <vector>

#include "vmbpo/common.hpp"

namespace vmbpo {

enum class Activation { tanh_fn, relu };

struct MlpSpec {
  int input_dim = 1;
  std::vector<int> hidden;
  int output_dim = 1;
  Activation activation = Activation::tanh_fn;

  std::vector<int> layer_dims() const;
  int param_count() const;
  void require_valid() const;
};

struct TensorSlice {
  std::string name;
  long offset = 0;
  int rows = 0;
  int cols = 0;  // 1 for bias vectors
};

/// Maps named weight/bias tensors onto a flat parameter vector; covers the
/// vector exactly once.
struct ParamLayout {
  std::vector<TensorSlice> slices;
  long total = 0;
};

ParamLayout mlp_layout(const MlpSpec& spec);

/// Uniform(-s, s) weights with s = 1/sqrt(fan_in), zero biases.
std::vector<double> mlp_init(const MlpSpec& spec, Rng& rng);

void mlp_forward(const MlpSpec& spec, std::span<const double> params,
                 std::span<const double> input, std::span<double> output);

/// Accumulates d<output, cotangent>/dparams into param_grad; when input_grad
/// is nonempty, also accumulates d<output, cotangent>/dinput.
void mlp_backward(const MlpSpec& spec, std::span<const double> params,
                  std::span<const double> input, std::span<const double> cotangent,
                  std::span<double> param_grad, std::span<double> input_grad = {});

/// Adaptive-moment optimizer state; bias-corrected update, minimizing.
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<double> m, v;

  explicit Adam(long n) : m(n, 0.0), v(n, 0.0) {}
  void step(std::span<double> params, std::span<const double> grad, double lr);
};

/// Diagonal Gaussian over actions: an MLP trunk emits [mean, log_std] per
/// dimension (log_std clamped to [-10, 2]); optional tanh squashing with the
/// usual log-density change-of-variable correction.
constexpr double kLogStdMin = -10.0;
constexpr double kLogStdMax = 2.0;
constexpr double kSquashEps = 1e-6;

struct GaussianHead {
  MlpSpec trunk;  // output_dim == 2 * action_dim
  int action_dim = 1;
  bool squash = true;
  double log_std_min = kLogStdMin;
  double log_std_max = kLogStdMax;

  static GaussianHead make(int obs_dim, std::vector<int> hidden, int action_dim, bool squash,
                           Activation act = Activation::tanh_fn);
  int param_count() const { return trunk.param_count(); }
};

struct GaussianSample {
  std::vector<double> action;      // squashed if head.squash
  std::vector<double> pre_squash;  // u = mean + std * noise
  double log_prob = 0.0;
};

/// a = squash(mean + std * noise); log density includes the squash
/// correction. Deterministic given the supplied noise.
GaussianSample gaussian_sample(const GaussianHead& head, std::span<const double> params,
                               std::span<const double> obs, std::span<const double> noise);

/// Density of a given action (squashed heads invert the squash internally).
double gaussian_log_prob(const GaussianHead& head, std::span<const double> params,
                         std::span<const double> obs, std::span<const double> action);

/// Density evaluated at a given pre-squash point u (action = squash(u)).
double gaussian_log_prob_u(const GaussianHead& head, std::span<const double> params,
                           std::span<const double> obs, std::span<const double> u);

/// Accumulates w * d log q(a|x) / dparams with the action held fixed.
void gaussian_log_prob_backward(const GaussianHead& head, std::span<const double> params,
                                std::span<const double> obs, std::span<const double> action,
                                double w, std::span<double> param_grad);

/// Same, parameterized by the pre-squash point u (avoids the atanh roundtrip).
void gaussian_log_prob_backward_u(const GaussianHead& head, std::span<const double> params,
                                  std::span<const double> obs, std::span<const double> u,
                                  double w, std::span<double> param_grad);

/// Accumulates d<mean_cot, mean> + d<log_std_cot, log_std> w.r.t. params
/// (clamped log-std coordinates pass no gradient).
void gaussian_moments_backward(const GaussianHead& head, std::span<const double> params,
                               std::span<const double> obs, std::span<const double> mean_cot,
                               std::span<const double> log_std_cot, std::span<double> param_grad);

/// d log q(squash(u)|x) / du with parameters held fixed (its own density).
std::vector<double> gaussian_logp_grad_u(const GaussianHead& head, std::span<const double> params,
                                         std::span<const double> obs, std::span<const double> u);

/// d action / du at a given u (diagonal); ones for unsquashed heads.
std::vector<double> gaussian_daction_du(const GaussianHead& head, std::span<const double> u);

/// Pathwise hook: accumulates d<u_cotangent, u(obs, noise; params)>/dparams
/// where u = mean + std * noise.
void gaussian_path_backward_u(const GaussianHead& head, std::span<const double> params,
                              std::span<const double> obs, std::span<const double> noise,
                              std::span<const double> u_cotangent, std::span<double> param_grad);

/// Mean and clamped log-std at an observation.
void gaussian_moments(const GaussianHead& head, std::span<const double> params,
                      std::span<const double> obs, std::span<double> mean,
                      std::span<double> log_std);

/// Checkpoints: versioned header, layout descriptor, little-endian doubles.
void save_checkpoint(const std::string& path, const ParamLayout& layout,
                     std::span<const double> params);
struct Checkpoint {
  ParamLayout layout;
  std::vector<double> params;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vmbpo
