#include "vmbpo/nets.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace vmbpo {

namespace {

using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using MutVec = Eigen::Map<Eigen::VectorXd>;
using ConstMat = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MutMat = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

double activate(double z, Activation act) {
  return act == Activation::tanh_fn ? std::tanh(z) : std::max(0.0, z);
}

double activate_grad_from_output(double h, double z, Activation act) {
  return act == Activation::tanh_fn ? 1.0 - h * h : (z > 0.0 ? 1.0 : 0.0);
}

constexpr double kHalfLogTwoPi = 0.9189385332046727;  // log(2*pi)/2

}  // namespace

std::vector<int> MlpSpec::layer_dims() const {
  std::vector<int> dims;
  dims.push_back(input_dim);
  for (int h : hidden) dims.push_back(h);
  dims.push_back(output_dim);
  return dims;
}

int MlpSpec::param_count() const {
  auto dims = layer_dims();
  int total = 0;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) total += dims[k + 1] * dims[k] + dims[k + 1];
  return total;
}

void MlpSpec::require_valid() const {
  if (input_dim < 1 || output_dim < 1) throw std::invalid_argument("mlp dims must be >= 1");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("mlp hidden sizes must be >= 1");
}

ParamLayout mlp_layout(const MlpSpec& spec) {
  spec.require_valid();
  ParamLayout layout;
  auto dims = spec.layer_dims();
  long off = 0;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    std::string idx = std::to_string(k);
    layout.slices.push_back({"w" + idx, off, dims[k + 1], dims[k]});
    off += static_cast<long>(dims[k + 1]) * dims[k];
    layout.slices.push_back({"b" + idx, off, dims[k + 1], 1});
    off += dims[k + 1];
  }
  layout.total = off;
  return layout;
}

std::vector<double> mlp_init(const MlpSpec& spec, Rng& rng) {
  spec.require_valid();
  std::vector<double> params(spec.param_count(), 0.0);
  auto dims = spec.layer_dims();
  long off = 0;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    double s = 1.0 / std::sqrt(static_cast<double>(dims[k]));
    long n = static_cast<long>(dims[k + 1]) * dims[k];
    for (long i = 0; i < n; ++i) params[off + i] = uniform_real(rng, -s, s);
    off += n + dims[k + 1];  // biases stay zero
  }
  return params;
}

void mlp_forward(const MlpSpec& spec, std::span<const double> params,
                 std::span<const double> input, std::span<double> output) {
  auto dims = spec.layer_dims();
  if (static_cast<int>(input.size()) != dims.front() ||
      static_cast<int>(output.size()) != dims.back() ||
      static_cast<int>(params.size()) != spec.param_count())
    throw std::invalid_argument("mlp_forward: shape mismatch");

  Eigen::VectorXd h = ConstVec(input.data(), input.size());
  long off = 0;
  const std::size_t last = dims.size() - 2;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    ConstMat w(params.data() + off, dims[k + 1], dims[k]);
    off += static_cast<long>(dims[k + 1]) * dims[k];
    ConstVec b(params.data() + off, dims[k + 1]);
    off += dims[k + 1];
    Eigen::VectorXd z = w * h + b;
    if (k != last)
      for (int i = 0; i < z.size(); ++i) z(i) = activate(z(i), spec.activation);
    h = std::move(z);
  }
  MutVec(output.data(), output.size()) = h;
}

void mlp_backward(const MlpSpec& spec, std::span<const double> params,
                  std::span<const double> input, std::span<const double> cotangent,
                  std::span<double> param_grad, std::span<double> input_grad) {
  auto dims = spec.layer_dims();
  if (static_cast<int>(input.size()) != dims.front() ||
      static_cast<int>(cotangent.size()) != dims.back() ||
      static_cast<int>(params.size()) != spec.param_count() ||
      param_grad.size() != params.size())
    throw std::invalid_argument("mlp_backward: shape mismatch");
  if (!input_grad.empty() && static_cast<int>(input_grad.size()) != dims.front())
    throw std::invalid_argument("mlp_backward: input_grad shape mismatch");

  const std::size_t n_layers = dims.size() - 1;
  // forward pass keeping pre- and post-activation values
  std::vector<Eigen::VectorXd> acts(n_layers + 1);
  std::vector<Eigen::VectorXd> pre(n_layers);
  acts[0] = ConstVec(input.data(), input.size());
  std::vector<long> w_off(n_layers), b_off(n_layers);
  long off = 0;
  for (std::size_t k = 0; k < n_layers; ++k) {
    w_off[k] = off;
    ConstMat w(params.data() + off, dims[k + 1], dims[k]);
    off += static_cast<long>(dims[k + 1]) * dims[k];
    b_off[k] = off;
    ConstVec b(params.data() + off, dims[k + 1]);
    off += dims[k + 1];
    pre[k] = w * acts[k] + b;
    if (k + 1 < n_layers) {
      acts[k + 1] = pre[k];
      for (int i = 0; i < acts[k + 1].size(); ++i)
        acts[k + 1](i) = activate(acts[k + 1](i), spec.activation);
    } else {
      acts[k + 1] = pre[k];
    }
  }

  Eigen::VectorXd delta = ConstVec(cotangent.data(), cotangent.size());
  for (std::size_t k = n_layers; k-- > 0;) {
    MutMat gw(param_grad.data() + w_off[k], dims[k + 1], dims[k]);
    MutVec gb(param_grad.data() + b_off[k], dims[k + 1]);
    gw.noalias() += delta * acts[k].transpose();
    gb += delta;
    if (k == 0 && input_grad.empty()) break;
    ConstMat w(params.data() + w_off[k], dims[k + 1], dims[k]);
    Eigen::VectorXd back = w.transpose() * delta;
    if (k > 0) {
      for (int i = 0; i < back.size(); ++i)
        back(i) *= activate_grad_from_output(acts[k](i), pre[k - 1](i), spec.activation);
      delta = std::move(back);
    } else {
      MutVec(input_grad.data(), input_grad.size()) += back;
    }
  }
}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != m.size() || grad.size() != m.size())
    throw std::invalid_argument("adam: state size mismatch");
  ++t;
  double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

GaussianHead GaussianHead::make(int obs_dim, std::vector<int> hidden, int action_dim, bool squash,
                                Activation act) {
  GaussianHead head;
  head.trunk = MlpSpec{obs_dim, std::move(hidden), 2 * action_dim, act};
  head.action_dim = action_dim;
  head.squash = squash;
  return head;
}

void gaussian_moments(const GaussianHead& head, std::span<const double> params,
                      std::span<const double> obs, std::span<double> mean,
                      std::span<double> log_std) {
  std::vector<double> out(2 * head.action_dim);
  mlp_forward(head.trunk, params, obs, out);
  for (int i = 0; i < head.action_dim; ++i) {
    mean[i] = out[i];
    log_std[i] = std::clamp(out[head.action_dim + i], head.log_std_min, head.log_std_max);
  }
}

GaussianSample gaussian_sample(const GaussianHead& head, std::span<const double> params,
                               std::span<const double> obs, std::span<const double> noise) {
  const int d = head.action_dim;
  if (static_cast<int>(noise.size()) != d)
    throw std::invalid_argument("gaussian_sample: noise dimension mismatch");
  std::vector<double> mean(d), log_std(d);
  gaussian_moments(head, params, obs, mean, log_std);
  GaussianSample s;
  s.pre_squash.resize(d);
  s.action.resize(d);
  s.log_prob = 0.0;
  for (int i = 0; i < d; ++i) {
    double std_i = std::exp(log_std[i]);
    double u = mean[i] + std_i * noise[i];
    s.pre_squash[i] = u;
    s.log_prob += -log_std[i] - kHalfLogTwoPi - 0.5 * noise[i] * noise[i];
    if (head.squash) {
      double a = std::tanh(u);
      s.action[i] = a;
      s.log_prob -= std::log(1.0 - a * a + kSquashEps);
    } else {
      s.action[i] = u;
    }
  }
  return s;
}

double gaussian_log_prob_u(const GaussianHead& head, std::span<const double> params,
                           std::span<const double> obs, std::span<const double> u) {
  const int d = head.action_dim;
  std::vector<double> mean(d), log_std(d);
  gaussian_moments(head, params, obs, mean, log_std);
  double lp = 0.0;
  for (int i = 0; i < d; ++i) {
    double std_i = std::exp(log_std[i]);
    double eps = (u[i] - mean[i]) / std_i;
    lp += -log_std[i] - kHalfLogTwoPi - 0.5 * eps * eps;
    if (head.squash) {
      double a = std::tanh(u[i]);
      lp -= std::log(1.0 - a * a + kSquashEps);
    }
  }
  return lp;
}

double gaussian_log_prob(const GaussianHead& head, std::span<const double> params,
                         std::span<const double> obs, std::span<const double> action) {
  const int d = head.action_dim;
  std::vector<double> u(d);
  for (int i = 0; i < d; ++i) {
    if (head.squash) {
      double a = std::clamp(action[i], -1.0 + 1e-12, 1.0 - 1e-12);
      u[i] = std::atanh(a);
    } else {
      u[i] = action[i];
    }
  }
  return gaussian_log_prob_u(head, params, obs, u);
}

void gaussian_log_prob_backward(const GaussianHead& head, std::span<const double> params,
                                std::span<const double> obs, std::span<const double> action,
                                double w, std::span<double> param_grad) {
  const int d = head.action_dim;
  std::vector<double> mean(d), log_std(d), raw(2 * d);
  mlp_forward(head.trunk, params, obs, raw);
  std::vector<double> cot(2 * d, 0.0);
  for (int i = 0; i < d; ++i) {
    mean[i] = raw[i];
    log_std[i] = std::clamp(raw[d + i], head.log_std_min, head.log_std_max);
    double u = head.squash ? std::atanh(std::clamp(action[i], -1.0 + 1e-12, 1.0 - 1e-12))
                           : action[i];
    double std_i = std::exp(log_std[i]);
    double eps = (u - mean[i]) / std_i;
    cot[i] = w * (eps / std_i);
    bool clamped = raw[d + i] < head.log_std_min || raw[d + i] > head.log_std_max;
    cot[d + i] = clamped ? 0.0 : w * (eps * eps - 1.0);
    // squash correction is independent of the parameters for a fixed action
  }
  mlp_backward(head.trunk, params, obs, cot, param_grad);
}

void gaussian_log_prob_backward_u(const GaussianHead& head, std::span<const double> params,
                                  std::span<const double> obs, std::span<const double> u,
                                  double w, std::span<double> param_grad) {
  const int d = head.action_dim;
  std::vector<double> raw(2 * d);
  mlp_forward(head.trunk, params, obs, raw);
  std::vector<double> cot(2 * d, 0.0);
  for (int i = 0; i < d; ++i) {
    double log_std = std::clamp(raw[d + i], head.log_std_min, head.log_std_max);
    double std_i = std::exp(log_std);
    double eps = (u[i] - raw[i]) / std_i;
    cot[i] = w * (eps / std_i);
    bool clamped = raw[d + i] < head.log_std_min || raw[d + i] > head.log_std_max;
    cot[d + i] = clamped ? 0.0 : w * (eps * eps - 1.0);
  }
  mlp_backward(head.trunk, params, obs, cot, param_grad);
}

void gaussian_moments_backward(const GaussianHead& head, std::span<const double> params,
                               std::span<const double> obs, std::span<const double> mean_cot,
                               std::span<const double> log_std_cot, std::span<double> param_grad) {
  const int d = head.action_dim;
  std::vector<double> raw(2 * d);
  mlp_forward(head.trunk, params, obs, raw);
  std::vector<double> cot(2 * d, 0.0);
  for (int i = 0; i < d; ++i) {
    cot[i] = mean_cot[i];
    bool clamped = raw[d + i] < head.log_std_min || raw[d + i] > head.log_std_max;
    cot[d + i] = clamped ? 0.0 : log_std_cot[i];
  }
  mlp_backward(head.trunk, params, obs, cot, param_grad);
}

std::vector<double> gaussian_logp_grad_u(const GaussianHead& head, std::span<const double> params,
                                         std::span<const double> obs, std::span<const double> u) {
  const int d = head.action_dim;
  std::vector<double> mean(d), log_std(d);
  gaussian_moments(head, params, obs, mean, log_std);
  std::vector<double> g(d, 0.0);
  for (int i = 0; i < d; ++i) {
    double std_i = std::exp(log_std[i]);
    double eps = (u[i] - mean[i]) / std_i;
    g[i] = -eps / std_i;
    if (head.squash) {
      double a = std::tanh(u[i]);
      g[i] += 2.0 * a * (1.0 - a * a) / (1.0 - a * a + kSquashEps);
    }
  }
  return g;
}

std::vector<double> gaussian_daction_du(const GaussianHead& head, std::span<const double> u) {
  std::vector<double> g(head.action_dim, 1.0);
  if (head.squash)
    for (int i = 0; i < head.action_dim; ++i) {
      double a = std::tanh(u[i]);
      g[i] = 1.0 - a * a;
    }
  return g;
}

void gaussian_path_backward_u(const GaussianHead& head, std::span<const double> params,
                              std::span<const double> obs, std::span<const double> noise,
                              std::span<const double> u_cotangent, std::span<double> param_grad) {
  const int d = head.action_dim;
  std::vector<double> raw(2 * d);
  mlp_forward(head.trunk, params, obs, raw);
  std::vector<double> cot(2 * d, 0.0);
  for (int i = 0; i < d; ++i) {
    double log_std = std::clamp(raw[d + i], head.log_std_min, head.log_std_max);
    double std_i = std::exp(log_std);
    cot[i] = u_cotangent[i];  // du/dmean = 1
    bool clamped = raw[d + i] < head.log_std_min || raw[d + i] > head.log_std_max;
    cot[d + i] = clamped ? 0.0 : u_cotangent[i] * std_i * noise[i];  // du/dlogstd
  }
  mlp_backward(head.trunk, params, obs, cot, param_grad);
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kMagic[8] = {'P', 'V', 'C', 'K', 'P', 'T', '0', '1'};

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamLayout& layout,
                     std::span<const double> params) {
  if (static_cast<long>(params.size()) != layout.total)
    throw std::invalid_argument("save_checkpoint: layout does not cover the parameter vector");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, 1);  // version
  write_pod<std::uint64_t>(out, layout.slices.size());
  for (const auto& s : layout.slices) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
    out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    write_pod<std::int64_t>(out, s.offset);
    write_pod<std::int32_t>(out, s.rows);
    write_pod<std::int32_t>(out, s.cols);
  }
  write_pod<std::uint64_t>(out, params.size());
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw std::runtime_error("load_checkpoint: bad magic");
  auto version = read_pod<std::uint32_t>(in);
  if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
  Checkpoint ck;
  auto n_slices = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_slices; ++i) {
    TensorSlice s;
    auto len = read_pod<std::uint32_t>(in);
    s.name.resize(len);
    in.read(s.name.data(), len);
    s.offset = read_pod<std::int64_t>(in);
    s.rows = read_pod<std::int32_t>(in);
    s.cols = read_pod<std::int32_t>(in);
    ck.layout.slices.push_back(std::move(s));
  }
  auto n = read_pod<std::uint64_t>(in);
  ck.layout.total = static_cast<long>(n);
  ck.params.resize(n);
  in.read(reinterpret_cast<char*>(ck.params.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("load_checkpoint: truncated parameters");
  return ck;
}

}  // namespace vmbpo
