#pragma once

#include <string>
#include <vector>

#include "fargan/layers.hpp"

namespace fargan {

/// Spatially-adaptive modulation: gamma(m) * (h - mu_c) / (sigma_c + eps) + beta(m).
///
/// mu_c and sigma_c are pooled over batch and space. The printed variance
/// places mu^2 inside the sum over n,x,y; (1/NHW) sum(h^2 - mu^2) equals
/// E[h^2] - mu^2, which is what channel_normalize computes.
template <typename T>
class SpadeModule {
 public:
  static constexpr double kEpsilon = 1e-5;

  SpadeModule() = default;
  SpadeModule(Index channels, Index cond_channels, Index hidden, Rng& rng)
      : shared(cond_channels, hidden, 3, {1, 1}, false, rng),
        gamma_head(hidden, channels, 3, {1, 1}, false, rng),
        beta_head(hidden, channels, 3, {1, 1}, false, rng) {
    // Start at identity modulation.
    std::fill(gamma_head.bias.values().begin(), gamma_head.bias.values().end(), T{1});
    std::fill(beta_head.bias.values().begin(), beta_head.bias.values().end(), T{0});
  }

  Tensor<T> forward(const Tensor<T>& h, const Tensor<T>& cond, Mode mode) {
    detail::require_rank(h.shape(), 4, "spade_forward", "feature");
    detail::require_rank(cond.shape(), 4, "spade_forward", "condition");
    if (cond.dim(2) != h.dim(2)) throw DimensionError("spade_forward: condition height (axis 2) does not match feature");
    if (cond.dim(3) != h.dim(3)) throw DimensionError("spade_forward: condition width (axis 3) does not match feature");
    if (cond.dim(0) != h.dim(0)) throw DimensionError("spade_forward: condition batch (axis 0) does not match feature");
    Tensor<T> normalized = channel_normalize(h, static_cast<T>(kEpsilon));
    Tensor<T> hidden = leaky_relu(shared.forward(cond, mode));
    Tensor<T> gamma = gamma_head.forward(hidden, mode);
    Tensor<T> beta = beta_head.forward(hidden, mode);
    return add(mul(gamma, normalized), beta);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    shared.collect(out, prefix + ".shared");
    gamma_head.collect(out, prefix + ".gamma");
    beta_head.collect(out, prefix + ".beta");
  }

  Conv2d<T> shared, gamma_head, beta_head;
};

/// x + scale_c * z, z ~ N(0, 1) of size H x W drawn once per call.
template <typename T>
class NoiseInjection {
 public:
  NoiseInjection() = default;
  explicit NoiseInjection(Index channels) : scale(Shape{channels}, T{0}, true) {}

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) {
    if (!ctx.noise) return x;
    if (ctx.rng == nullptr) throw ContractError("noise_inject: noise enabled but no generator supplied");
    detail::require_rank(x.shape(), 4, "noise_inject", "input");
    std::vector<T> z = normal_vector<T>(*ctx.rng, static_cast<std::size_t>(x.dim(2) * x.dim(3)));
    return add_channel_noise(x, scale, z);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const { out.push_back({prefix + ".scale", scale, true}); }

  Tensor<T> scale;
};

/// Noise injection, SPADE modulation, leaky-relu, then a 3x3 convolution.
template <typename T>
class SpadeBlock {
 public:
  SpadeBlock() = default;
  SpadeBlock(Index in_channels, Index out_channels, Index cond_channels, Index hidden, Rng& rng)
      : noise(in_channels),
        spade(in_channels, cond_channels, hidden, rng),
        conv(in_channels, out_channels, 3, {1, 1}, false, rng) {}

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& cond, const ForwardContext& ctx) {
    Tensor<T> h = noise.forward(x, ctx);
    h = spade.forward(h, cond, ctx.mode);
    return conv.forward(leaky_relu(h), ctx.mode);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    noise.collect(out, prefix + ".noise");
    spade.collect(out, prefix + ".spade");
    conv.collect(out, prefix + ".conv");
  }

  NoiseInjection<T> noise;
  SpadeModule<T> spade;
  Conv2d<T> conv;
};

}  // namespace fargan
