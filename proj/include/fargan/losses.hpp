#pragma once

// Generator and discriminator objectives: least-squares adversarial terms,
// pixel L1, and feature-space L1 under frozen feature networks.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fargan/layers.hpp"

namespace fargan {

struct LossWeights {
  double adv = 1.0;
  double l1 = 20.0;
  double perceptual = 2.0;
  double identity = 0.2;

  void validate() const {
    if (adv < 0 || l1 < 0 || perceptual < 0 || identity < 0) throw ConfigError("loss weights must be non-negative");
  }
};

struct LossReport {
  double adv_g = 0;
  double l1 = 0;
  double perceptual = 0;
  double identity = 0;
  double total_g = 0;
  double adv_d_real = 0;
  double adv_d_fake = 0;
  double total_d = 0;
  LossWeights weights;

  double recombined_g() const {
    return weights.adv * adv_g + weights.l1 * l1 + weights.perceptual * perceptual + weights.identity * identity;
  }
};

namespace detail {
template <typename T>
void require_nonempty(const Tensor<T>& t, const char* op) {
  if (!t.defined() || t.numel() == 0) throw ContractError(std::string(op) + ": empty scores");
}
}  // namespace detail

/// mean((s - 1)^2) over the patch grid.
template <typename T>
Tensor<T> adv_g(const Tensor<T>& fake_scores) {
  detail::require_nonempty(fake_scores, "adv_g");
  return mean(square(add_scalar(fake_scores, T{-1})));
}

/// mean(fake^2) and mean((real - 1)^2), returned separately.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> adv_d_terms(const Tensor<T>& fake_scores, const Tensor<T>& real_scores) {
  detail::require_nonempty(fake_scores, "adv_d");
  detail::require_nonempty(real_scores, "adv_d");
  return {mean(square(fake_scores)), mean(square(add_scalar(real_scores, T{-1})))};
}

template <typename T>
Tensor<T> adv_d(const Tensor<T>& fake_scores, const Tensor<T>& real_scores) {
  auto [fake, real] = adv_d_terms(fake_scores, real_scores);
  return add(fake, real);
}

/// Mean absolute difference over all elements.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  return mean(abs(sub(prediction, target)));
}

/// Frozen convolutional pyramid; every stage's activation is a tap.
template <typename T>
class FeatureNet {
 public:
  struct Stage {
    Tensor<T> weight;
    Tensor<T> bias;
    bool pool_before = false;
    bool activation = true;
    Index padding = 1;
  };

  FeatureNet() = default;
  explicit FeatureNet(std::vector<Stage> stages) : stages_(std::move(stages)) {
    for (auto& s : stages_) {
      s.weight.set_requires_grad(false);
      s.bias.set_requires_grad(false);
    }
  }

  /// Seeded random 3x3 pyramid: stage 0 at full resolution, each later stage
  /// average-pools first. He-scaled normal weights, zero bias.
  static FeatureNet random(std::uint64_t seed, std::vector<Index> channels = {16, 32, 64, 64}) {
    Rng rng = make_rng(seed, 0xFEA7);
    std::vector<Stage> stages;
    Index in = 3;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const Index out = channels[i];
      const Index fan_in = in * 9;
      Stage s;
      s.weight = Tensor<T>(Shape{out, in, 3, 3},
                           normal_vector<T>(rng, static_cast<std::size_t>(out * fan_in), std::sqrt(2.0 / fan_in)));
      s.bias = Tensor<T>::zeros(Shape{out});
      s.pool_before = i > 0;
      stages.push_back(std::move(s));
      in = out;
    }
    return FeatureNet(std::move(stages));
  }

  /// Single 1x1 identity stage without activation.
  static FeatureNet identity(Index channels) {
    Stage s;
    s.weight = Tensor<T>::zeros(Shape{channels, channels, 1, 1});
    for (Index c = 0; c < channels; ++c) s.weight[c * channels + c] = T{1};
    s.bias = Tensor<T>::zeros(Shape{channels});
    s.activation = false;
    s.padding = 0;
    return FeatureNet({std::move(s)});
  }

  std::vector<Tensor<T>> taps(const Tensor<T>& x) const {
    std::vector<Tensor<T>> out;
    Tensor<T> h = x;
    for (const auto& s : stages_) {
      if (s.pool_before) h = avg_pool2d(h, 2);
      h = conv2d(h, s.weight, s.bias, {1, s.padding});
      if (s.activation) h = leaky_relu(h);
      out.push_back(h);
    }
    return out;
  }

  /// Global average of the final tap: [N, F] as rows of doubles.
  std::vector<std::vector<double>> pooled(const Tensor<T>& x) const {
    NoGradGuard guard;
    Tensor<T> last = taps(x).back();
    const Index batch = last.dim(0), channels = last.dim(1), plane = last.dim(2) * last.dim(3);
    std::vector<std::vector<double>> rows(batch, std::vector<double>(channels));
    for (Index n = 0; n < batch; ++n) {
      for (Index c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (Index i = 0; i < plane; ++i) acc += last.values()[(n * channels + c) * plane + i];
        rows[n][c] = acc / static_cast<double>(plane);
      }
    }
    return rows;
  }

  const std::vector<Stage>& stages() const { return stages_; }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      out.push_back({prefix + ".stage" + std::to_string(i) + ".weight", stages_[i].weight, false});
      out.push_back({prefix + ".stage" + std::to_string(i) + ".bias", stages_[i].bias, false});
    }
  }

 private:
  std::vector<Stage> stages_;
};

/// Sum over taps of mean |phi_l(prediction) - phi_l(target)|.
template <typename T>
Tensor<T> feature_loss(const Tensor<T>& prediction, const Tensor<T>& target, const FeatureNet<T>& net) {
  detail::require_same_shape(prediction.shape(), target.shape(), "feature_loss");
  std::vector<Tensor<T>> fake_taps = net.taps(prediction);
  std::vector<Tensor<T>> real_taps;
  {
    NoGradGuard guard;
    real_taps = net.taps(target.detach());
  }
  Tensor<T> total = l1_loss(fake_taps[0], real_taps[0]);
  for (std::size_t i = 1; i < fake_taps.size(); ++i) total = add(total, l1_loss(fake_taps[i], real_taps[i]));
  return total;
}

template <typename T>
struct LossResult {
  Tensor<T> total;
  LossReport report;
};

/// Weighted generator objective. Pass undefined `fake_scores` to drop the
/// adversarial term (discriminator ablation).
template <typename T>
LossResult<T> total_generator_loss(const Tensor<T>& fake_scores, const Tensor<T>& fake, const Tensor<T>& real,
                                   const FeatureNet<T>& perceptual_net, const FeatureNet<T>& identity_net,
                                   const LossWeights& weights) {
  weights.validate();
  LossResult<T> result;
  result.report.weights = weights;
  Tensor<T> l1 = l1_loss(fake, real);
  Tensor<T> perceptual = feature_loss(fake, real, perceptual_net);
  Tensor<T> identity = feature_loss(fake, real, identity_net);
  Tensor<T> total = add(mul_scalar(l1, static_cast<T>(weights.l1)),
                        add(mul_scalar(perceptual, static_cast<T>(weights.perceptual)),
                            mul_scalar(identity, static_cast<T>(weights.identity))));
  if (fake_scores.defined()) {
    Tensor<T> adv = adv_g(fake_scores);
    total = add(mul_scalar(adv, static_cast<T>(weights.adv)), total);
    result.report.adv_g = adv.item();
  } else {
    result.report.weights.adv = 0.0;
  }
  result.report.l1 = l1.item();
  result.report.perceptual = perceptual.item();
  result.report.identity = identity.item();
  result.report.total_g = result.report.recombined_g();
  result.total = total;
  return result;
}

template <typename T>
LossResult<T> total_discriminator_loss(const Tensor<T>& fake_scores, const Tensor<T>& real_scores) {
  auto [fake, real] = adv_d_terms(fake_scores, real_scores);
  LossResult<T> result;
  result.total = add(fake, real);
  result.report.adv_d_fake = fake.item();
  result.report.adv_d_real = real.item();
  result.report.total_d = result.report.adv_d_fake + result.report.adv_d_real;
  return result;
}

}  // namespace fargan
