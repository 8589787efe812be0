#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "fargan/ops.hpp"
#include "fargan/random.hpp"

namespace fargan {

enum class Mode { train, eval };

/// Per-forward settings threaded through every layer.
struct ForwardContext {
  Mode mode = Mode::train;
  Rng* rng = nullptr;       // required when noise is enabled
  bool noise = true;        // false substitutes z = 0
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

template <typename T>
Tensor<T> init_uniform(Shape shape, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  const auto count = static_cast<std::size_t>(shape_numel(shape));
  return Tensor<T>(std::move(shape), uniform_vector<T>(rng, count, -bound, bound), true);
}

// ---------------------------------------------------------------------------
// Channel statistics

struct ChannelStats {
  std::vector<double> mu;
  std::vector<double> sigma;
};

/// Per-channel mean and standard deviation pooled over batch and space,
/// sigma = sqrt(E[h^2] - mu^2) with 64-bit accumulation.
template <typename T>
ChannelStats channel_stats(const Tensor<T>& h) {
  if (!h.defined() || h.numel() == 0) throw ContractError("channel_stats: empty tensor");
  detail::require_rank(h.shape(), 4, "channel_stats", "input");
  const Index batch = h.dim(0), channels = h.dim(1), plane = h.dim(2) * h.dim(3);
  const double count = static_cast<double>(batch * plane);
  ChannelStats stats{std::vector<double>(channels), std::vector<double>(channels)};
  for (Index c = 0; c < channels; ++c) {
    double s = 0.0, s2 = 0.0;
    for (Index n = 0; n < batch; ++n) {
      const T* src = h.values().data() + (n * channels + c) * plane;
      for (Index i = 0; i < plane; ++i) {
        s += src[i];
        s2 += static_cast<double>(src[i]) * src[i];
      }
    }
    stats.mu[c] = s / count;
    stats.sigma[c] = std::sqrt(std::max(0.0, s2 / count - stats.mu[c] * stats.mu[c]));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Spectral normalisation

/// Power-iteration state for a weight viewed as (leading axis) x (rest).
template <typename T>
struct SpectralNormState {
  Tensor<T> u;  // length = leading extent, unit norm
  Tensor<T> v;  // length = product of remaining extents
  int n_power_iterations = 1;

  SpectralNormState() = default;
  SpectralNormState(const Tensor<T>& weight, Rng& rng, int iterations = 1) : n_power_iterations(iterations) {
    const Index rows = weight.dim(0);
    const Index cols = weight.numel() / rows;
    u = Tensor<T>(Shape{rows}, normal_vector<T>(rng, static_cast<std::size_t>(rows)));
    v = Tensor<T>::zeros(Shape{cols});
    normalize(u.values());
    power_iterate(weight, 1);
  }

  /// Runs `iterations` rounds of v <- W^T u / |.|, u <- W v / |.|. A zero
  /// matrix leaves the state untouched.
  void power_iterate(const Tensor<T>& weight, int iterations) {
    const Index rows = u.numel();
    const Index cols = v.numel();
    detail::ConstMatMap<T> w(weight.values().data(), rows, cols);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> uv(u.values().data(), rows);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> vv(v.values().data(), cols);
    for (int it = 0; it < iterations; ++it) {
      Eigen::Matrix<T, Eigen::Dynamic, 1> next_v = w.transpose() * uv;
      const T nv = next_v.norm();
      if (!(nv > T(1e-12))) return;
      vv = next_v / nv;
      Eigen::Matrix<T, Eigen::Dynamic, 1> next_u = w * vv;
      const T nu = next_u.norm();
      if (!(nu > T(1e-12))) return;
      uv = next_u / nu;
    }
  }

  /// u^T W v for the current vectors.
  T sigma(const Tensor<T>& weight) const {
    const Index rows = u.numel();
    const Index cols = v.numel();
    detail::ConstMatMap<T> w(weight.values().data(), rows, cols);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> uv(u.values().data(), rows);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> vv(v.values().data(), cols);
    return uv.dot(w * vv);
  }

 private:
  static void normalize(std::vector<T>& x) {
    T n{0};
    for (T e : x) n += e * e;
    n = std::sqrt(n);
    if (n > T(1e-12)) {
      for (T& e : x) e /= n;
    }
  }
};

/// W / sigma_max-estimate. With `update`, runs the state's power iterations
/// first. u and v are constants for differentiation.
template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, SpectralNormState<T>& state, bool update = true) {
  if (weight.numel() / weight.dim(0) != state.v.numel() || weight.dim(0) != state.u.numel()) {
    throw DimensionError("spectral_normalize: weight " + shape_str(weight.shape()) + " does not match state");
  }
  if (update) state.power_iterate(weight, state.n_power_iterations);
  const T sigma = state.sigma(weight);
  if (!(std::abs(sigma) > T(1e-12))) return mul_scalar(weight, T{0});

  const Index rows = state.u.numel();
  const Index cols = state.v.numel();
  std::vector<T> out(weight.values());
  for (T& e : out) e /= sigma;
  return Tensor<T>::from_op(weight.shape(), std::move(out), {weight.node()},
                            [sigma, rows, cols, u = state.u.values(), v = state.v.values()](detail::Node<T>& self) {
                              auto& parent = *self.parents[0];
                              // d/dW (W / (u^T W v)) = G / sigma - <G, W_sn> / sigma * u v^T
                              T inner{0};
                              for (std::size_t i = 0; i < self.grad.size(); ++i) inner += self.grad[i] * self.data[i];
                              const T coef = inner / sigma;
                              for (Index r = 0; r < rows; ++r) {
                                for (Index c = 0; c < cols; ++c) {
                                  const Index at = r * cols + c;
                                  parent.grad[at] += self.grad[at] / sigma - coef * u[r] * v[c];
                                }
                              }
                            });
}

// ---------------------------------------------------------------------------
// Convolution layers

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Index in_channels, Index out_channels, Index kernel, ConvGeometry geom, bool spectral, Rng& rng,
         int power_iterations = 1)
      : weight(init_uniform<T>(Shape{out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng)),
        bias(init_uniform<T>(Shape{out_channels}, in_channels * kernel * kernel, rng)),
        geom_(geom) {
    if (spectral) sn = SpectralNormState<T>(weight, rng, power_iterations);
  }

  Tensor<T> effective_weight(Mode mode) {
    return sn ? spectral_normalize(weight, *sn, mode == Mode::train) : weight;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) { return conv2d(x, effective_weight(mode), bias, geom_); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
    if (sn) {
      out.push_back({prefix + ".sn_u", sn->u, false});
      out.push_back({prefix + ".sn_v", sn->v, false});
    }
  }

  Index out_channels() const { return weight.dim(0); }

  Tensor<T> weight;
  Tensor<T> bias;
  std::optional<SpectralNormState<T>> sn;

 private:
  ConvGeometry geom_;
};

/// Transposed convolution; the spectral view uses the leading (input-channel) axis as rows.
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(Index in_channels, Index out_channels, Index kernel, ConvGeometry geom, bool spectral, Rng& rng,
                  int power_iterations = 1)
      : weight(init_uniform<T>(Shape{in_channels, out_channels, kernel, kernel}, in_channels * kernel * kernel, rng)),
        bias(init_uniform<T>(Shape{out_channels}, in_channels * kernel * kernel, rng)),
        geom_(geom) {
    if (spectral) sn = SpectralNormState<T>(weight, rng, power_iterations);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> w = sn ? spectral_normalize(weight, *sn, mode == Mode::train) : weight;
    return transposed_conv2d(x, w, bias, geom_);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
    if (sn) {
      out.push_back({prefix + ".sn_u", sn->u, false});
      out.push_back({prefix + ".sn_v", sn->v, false});
    }
  }

  Tensor<T> weight;
  Tensor<T> bias;
  std::optional<SpectralNormState<T>> sn;

 private:
  ConvGeometry geom_;
};

// ---------------------------------------------------------------------------
// Self-attention

/// x + gamma * out(value(x) . softmax(query(x)^T key(x))^T) over spatial positions.
template <typename T>
class SelfAttention {
 public:
  static constexpr Index kReduction = 8;

  SelfAttention() = default;
  SelfAttention(Index channels, bool spectral, Rng& rng, int power_iterations = 1) {
    if (channels % kReduction != 0) {
      throw ConfigError("self-attention: channel count " + std::to_string(channels) + " not divisible by " +
                        std::to_string(kReduction));
    }
    const Index reduced = channels / kReduction;
    query = Conv2d<T>(channels, reduced, 1, {}, spectral, rng, power_iterations);
    key = Conv2d<T>(channels, reduced, 1, {}, spectral, rng, power_iterations);
    value = Conv2d<T>(channels, channels, 1, {}, spectral, rng, power_iterations);
    output = Conv2d<T>(channels, channels, 1, {}, spectral, rng, power_iterations);
    gamma = Tensor<T>::scalar(T{0}, true);
  }

  /// Attention matrix [N, HW, HW]; row i holds the weights over positions j.
  Tensor<T> attention_weights(const Tensor<T>& x, Mode mode) {
    const Index batch = x.dim(0), plane = x.dim(2) * x.dim(3);
    const Index reduced = query.out_channels();
    Tensor<T> q = transpose_last2(reshape(query.forward(x, mode), Shape{batch, reduced, plane}));
    Tensor<T> k = reshape(key.forward(x, mode), Shape{batch, reduced, plane});
    return softmax(matmul(q, k), 2);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    detail::require_rank(x.shape(), 4, "self_attention", "input");
    const Index batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor<T> attn = attention_weights(x, mode);
    Tensor<T> v = reshape(value.forward(x, mode), Shape{batch, channels, plane});
    Tensor<T> attended = reshape(matmul(v, transpose_last2(attn)), x.shape());
    return add(x, scale_by(output.forward(attended, mode), gamma));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    query.collect(out, prefix + ".query");
    key.collect(out, prefix + ".key");
    value.collect(out, prefix + ".value");
    output.collect(out, prefix + ".output");
    out.push_back({prefix + ".gamma", gamma, true});
  }

  Conv2d<T> query, key, value, output;
  Tensor<T> gamma;
};

// ---------------------------------------------------------------------------
// Residual downsampling block

enum class PoolKind { average, max };

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind) {
  return kind == PoolKind::average ? avg_pool2d(x, 2) : max_pool2d(x, 2);
}

/// Pre-activation residual block: pool(conv2(act(conv1(act(x))))) + pool(skip(x)).
template <typename T>
class ResidualDown {
 public:
  ResidualDown() = default;
  ResidualDown(Index in_channels, Index out_channels, PoolKind pool, Rng& rng, int power_iterations = 1)
      : conv1(in_channels, out_channels, 3, {1, 1}, true, rng, power_iterations),
        conv2(out_channels, out_channels, 3, {1, 1}, true, rng, power_iterations),
        skip(in_channels, out_channels, 1, {}, true, rng, power_iterations),
        pool(pool) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    detail::require_divisible(x.shape(), 2, "residual_down");
    Tensor<T> h = conv1.forward(leaky_relu(x), mode);
    h = conv2.forward(leaky_relu(h), mode);
    return add(pool2d(h, pool), pool2d(skip.forward(x, mode), pool));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    conv1.collect(out, prefix + ".conv1");
    conv2.collect(out, prefix + ".conv2");
    skip.collect(out, prefix + ".skip");
  }

  Conv2d<T> conv1, conv2, skip;
  PoolKind pool = PoolKind::average;
};

}  // namespace fargan
