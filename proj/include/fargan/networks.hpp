#pragma once

// Generator (landmark embedder + SPADE U-Net transformer) and the
// mask-conditioned patch discriminator.

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fargan/layers.hpp"
#include "fargan/spade.hpp"

namespace fargan {

enum class SpadeInput { features, masks };

struct NetworkConfig {
  Index image_size = 256;
  Index base_channels = 64;
  Index max_channels = 512;
  int depth = 5;
  std::set<Index> attention_resolutions{32, 64};
  bool use_attention = true;
  bool use_noise = true;
  SpadeInput spade_input = SpadeInput::features;
  Index mask_channels = 3;
  Index spade_hidden = 128;
  PoolKind embedder_pool = PoolKind::average;
  int power_iterations = 1;

  /// 64 x 64 configuration used for CPU-scale training and the test suites.
  static NetworkConfig desk() {
    NetworkConfig cfg;
    cfg.image_size = 64;
    cfg.depth = 3;
    cfg.base_channels = 8;
    cfg.max_channels = 64;
    cfg.spade_hidden = 16;
    cfg.attention_resolutions = {16, 32};
    return cfg;
  }

  Index channels(int level) const { return std::min(base_channels << level, max_channels); }
  Index resolution(int level) const { return image_size >> level; }

  void validate() const {
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (image_size % (Index{1} << depth) != 0 || resolution(depth) < 4) {
      throw ConfigError("image_size " + std::to_string(image_size) + " must equal 2^depth x bottleneck with bottleneck >= 4");
    }
    if (base_channels < 1 || max_channels < base_channels) throw ConfigError("invalid channel schedule");
    if (mask_channels != 1 && mask_channels != 3) throw ConfigError("mask_channels must be 1 or 3");
    if (spade_hidden < 1) throw ConfigError("spade_hidden must be >= 1");
    if (power_iterations < 1) throw ConfigError("power_iterations must be >= 1");
    if (use_attention) {
      for (Index r : attention_resolutions) {
        bool found = false;
        for (int k = 0; k < depth; ++k) found = found || resolution(k) == r;
        if (!found) throw ConfigError("attention resolution " + std::to_string(r) + " is not a decoder resolution");
      }
      if (channels(2) % SelfAttention<float>::kReduction != 0) {
        throw ConfigError("discriminator attention needs channels divisible by 8");
      }
    }
  }
};

template <typename T>
using FeaturePyramid = std::vector<Tensor<T>>;

/// Mask -> feature pyramid: input conv then `depth` residual downsampling blocks.
template <typename T>
class Embedder {
 public:
  Embedder() = default;
  Embedder(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
    input = Conv2d<T>(cfg.mask_channels, cfg.channels(0), 3, {1, 1}, true, rng, cfg.power_iterations);
    for (int k = 1; k <= cfg.depth; ++k) {
      blocks.emplace_back(cfg.channels(k - 1), cfg.channels(k), cfg.embedder_pool, rng, cfg.power_iterations);
    }
  }

  FeaturePyramid<T> forward(const Tensor<T>& mask, Mode mode) {
    check_mask(mask, cfg_);
    FeaturePyramid<T> pyramid;
    pyramid.push_back(input.forward(mask, mode));
    for (auto& block : blocks) pyramid.push_back(block.forward(pyramid.back(), mode));
    return pyramid;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    input.collect(out, prefix + ".input");
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".down" + std::to_string(i + 1));
  }

  static void check_mask(const Tensor<T>& mask, const NetworkConfig& cfg) {
    detail::require_rank(mask.shape(), 4, "embed", "mask");
    if (mask.dim(1) != cfg.mask_channels) {
      throw ConfigError("mask has " + std::to_string(mask.dim(1)) + " channels, configuration expects " +
                        std::to_string(cfg.mask_channels));
    }
    if (mask.dim(2) != cfg.image_size || mask.dim(3) != cfg.image_size) {
      throw DimensionError("mask spatial extents must equal image_size " + std::to_string(cfg.image_size));
    }
  }

  Conv2d<T> input;
  std::vector<ResidualDown<T>> blocks;

 private:
  NetworkConfig cfg_;
};

/// U-Net transformer: encoder, SPADE decoder with concatenated skips, tanh output.
template <typename T>
class Transformer {
 public:
  Transformer() = default;
  Transformer(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int depth = cfg.depth;
    auto cond_channels = [&](int k) {
      return cfg.spade_input == SpadeInput::features ? cfg.channels(k) : cfg.mask_channels;
    };
    input = Conv2d<T>(3, cfg.channels(0), 3, {1, 1}, false, rng);
    for (int k = 1; k <= depth; ++k) {
      down.emplace_back(cfg.channels(k - 1), cfg.channels(k), 3, ConvGeometry{1, 1}, true, rng, cfg.power_iterations);
    }
    bottleneck = SpadeBlock<T>(cfg.channels(depth), cfg.channels(depth), cond_channels(depth), cfg.spade_hidden, rng);
    up.resize(depth);
    decode.resize(depth);
    attention.resize(depth);
    for (int k = depth - 1; k >= 0; --k) {
      up[k] = ConvTranspose2d<T>(cfg.channels(k + 1), cfg.channels(k), 4, {2, 1}, true, rng, cfg.power_iterations);
      if (cfg.use_attention && cfg.attention_resolutions.count(cfg.resolution(k))) {
        attention[k] = SelfAttention<T>(cfg.channels(k), true, rng, cfg.power_iterations);
      }
      decode[k] = SpadeBlock<T>(2 * cfg.channels(k), cfg.channels(k), cond_channels(k), cfg.spade_hidden, rng);
    }
    output = Conv2d<T>(cfg.channels(0), 3, 3, {1, 1}, false, rng);
  }

  Tensor<T> forward(const Tensor<T>& source, const FeaturePyramid<T>& pyramid, const ForwardContext& ctx) {
    const int depth = cfg_.depth;
    if (static_cast<int>(pyramid.size()) != depth + 1) {
      throw ConfigError("pyramid has " + std::to_string(pyramid.size()) + " levels, transformer expects " +
                        std::to_string(depth + 1));
    }
    detail::require_rank(source.shape(), 4, "generate", "source");
    if (source.dim(1) != 3) throw DimensionError("generate: source must have 3 channels on axis 1");
    if (source.dim(2) != cfg_.image_size || source.dim(3) != cfg_.image_size) {
      throw DimensionError("generate: source spatial extents must equal image_size");
    }

    std::vector<Tensor<T>> skips;
    skips.push_back(input.forward(source, ctx.mode));
    for (int k = 1; k <= depth; ++k) {
      skips.push_back(leaky_relu(down[k - 1].forward(avg_pool2d(skips.back(), 2), ctx.mode)));
    }
    Tensor<T> h = bottleneck.forward(skips[depth], pyramid[depth], ctx);
    for (int k = depth - 1; k >= 0; --k) {
      h = leaky_relu(up[k].forward(h, ctx.mode));
      if (attention[k]) h = attention[k]->forward(h, ctx.mode);
      Tensor<T> skip = skip_connections ? skips[k] : Tensor<T>::zeros(skips[k].shape());
      h = decode[k].forward(concat_channels<T>({h, skip}), pyramid[k], ctx);
    }
    return tanh(output.forward(h, ctx.mode));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    input.collect(out, prefix + ".input");
    for (std::size_t k = 0; k < down.size(); ++k) down[k].collect(out, prefix + ".down" + std::to_string(k + 1));
    bottleneck.collect(out, prefix + ".bottleneck");
    for (std::size_t k = 0; k < up.size(); ++k) {
      up[k].collect(out, prefix + ".up" + std::to_string(k));
      if (attention[k]) attention[k]->collect(out, prefix + ".attention" + std::to_string(k));
      decode[k].collect(out, prefix + ".decode" + std::to_string(k));
    }
    output.collect(out, prefix + ".output");
  }

  Conv2d<T> input;
  std::vector<Conv2d<T>> down;
  SpadeBlock<T> bottleneck;
  std::vector<ConvTranspose2d<T>> up;
  std::vector<std::optional<SelfAttention<T>>> attention;
  std::vector<SpadeBlock<T>> decode;
  Conv2d<T> output;
  bool skip_connections = true;  // test switch: false feeds zeros instead of encoder features

 private:
  NetworkConfig cfg_;
};

/// G(x_src, m): conditions the transformer on the embedded target mask.
template <typename T>
class Generator {
 public:
  Generator() = default;
  Generator(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    if (cfg.spade_input == SpadeInput::features) embedder = Embedder<T>(cfg, rng);
    transformer = Transformer<T>(cfg, rng);
  }

  /// Embedder pyramid, or the nearest-resized mask at every level when
  /// spade_input = masks.
  FeaturePyramid<T> condition(const Tensor<T>& mask, Mode mode) {
    if (cfg_.spade_input == SpadeInput::features) return embedder.forward(mask, mode);
    Embedder<T>::check_mask(mask, cfg_);
    FeaturePyramid<T> pyramid;
    for (int k = 0; k <= cfg_.depth; ++k) {
      pyramid.push_back(resize_nearest(mask, cfg_.resolution(k), cfg_.resolution(k)));
    }
    return pyramid;
  }

  Tensor<T> forward(const Tensor<T>& source, const Tensor<T>& mask, const ForwardContext& ctx) {
    ForwardContext local = ctx;
    local.noise = ctx.noise && cfg_.use_noise;
    return transformer.forward(source, condition(mask, ctx.mode), local);
  }

  ParamList<T> parameters(const std::string& prefix = "G") const {
    ParamList<T> out;
    if (cfg_.spade_input == SpadeInput::features) embedder.collect(out, prefix + ".embedder");
    transformer.collect(out, prefix + ".transformer");
    return out;
  }

  const NetworkConfig& config() const { return cfg_; }

  Embedder<T> embedder;
  Transformer<T> transformer;

 private:
  NetworkConfig cfg_;
};

/// Patch discriminator over image (+) mask: input conv, two stride-2
/// downsampling convs, attention, and a k=4 s=1 p=1 score head.
template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int iters = cfg.power_iterations;
    input = Conv2d<T>(3 + cfg.mask_channels, cfg.channels(0), 3, {1, 1}, true, rng, iters);
    down1 = Conv2d<T>(cfg.channels(0), cfg.channels(1), 4, {2, 1}, true, rng, iters);
    down2 = Conv2d<T>(cfg.channels(1), cfg.channels(2), 4, {2, 1}, true, rng, iters);
    if (cfg.use_attention) attention = SelfAttention<T>(cfg.channels(2), true, rng, iters);
    head = Conv2d<T>(cfg.channels(2), 1, 4, {1, 1}, true, rng, iters);
  }

  Tensor<T> forward(const Tensor<T>& image, const Tensor<T>& mask, Mode mode) {
    detail::require_rank(image.shape(), 4, "discriminate", "image");
    detail::require_rank(mask.shape(), 4, "discriminate", "mask");
    if (image.dim(2) != mask.dim(2)) throw DimensionError("discriminate: height (axis 2) mismatch between image and mask");
    if (image.dim(3) != mask.dim(3)) throw DimensionError("discriminate: width (axis 3) mismatch between image and mask");
    Tensor<T> h = leaky_relu(input.forward(concat_channels<T>({image, mask}), mode));
    h = leaky_relu(down1.forward(h, mode));
    h = leaky_relu(down2.forward(h, mode));
    if (attention) h = attention->forward(h, mode);
    return head.forward(h, mode);
  }

  /// Patch grid extent for a square input of side `size`.
  static Index patch_extent(Index size) { return size / 4 - 1; }

  ParamList<T> parameters(const std::string& prefix = "D") const {
    ParamList<T> out;
    input.collect(out, prefix + ".input");
    down1.collect(out, prefix + ".down1");
    down2.collect(out, prefix + ".down2");
    if (attention) attention->collect(out, prefix + ".attention");
    head.collect(out, prefix + ".head");
    return out;
  }

  Conv2d<T> input, down1, down2, head;
  std::optional<SelfAttention<T>> attention;

 private:
  NetworkConfig cfg_;
};

}  // namespace fargan
