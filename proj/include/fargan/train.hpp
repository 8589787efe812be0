#pragma once

// Adam, the learning-rate schedule, the alternating D/G update, and
// checkpoint persistence of the whole training state.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fargan/checkpoint.hpp"
#include "fargan/dataset.hpp"
#include "fargan/losses.hpp"
#include "fargan/metrics.hpp"
#include "fargan/networks.hpp"

namespace fargan {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  AdamState() = default;
  AdamState(const ParamList<T>& params, AdamConfig cfg) : config(cfg) {
    for (const auto& p : params) {
      m.emplace_back(p.tensor.values().size(), T{0});
      v.emplace_back(p.tensor.values().size(), T{0});
    }
  }
};

/// Bias-corrected Adam over `params` (gradients read from each tensor).
/// Any non-finite gradient aborts before a single parameter changes.
template <typename T>
void adam_step(ParamList<T>& params, AdamState<T>& state, double lr) {
  if (lr < 0) throw ContractError("adam_step: negative learning rate");
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i].tensor;
    if (state.m[i].size() != t.values().size()) {
      throw DimensionError("adam_step: moment shape mismatch for " + params[i].name);
    }
    if (!t.has_grad()) throw ContractError("adam_step: " + params[i].name + " has no gradient buffer");
    for (T g : t.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in " + params[i].name + " at step " + std::to_string(state.step + 1));
      }
    }
  }
  ++state.step;
  const double b1 = state.config.beta1, b2 = state.config.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].tensor;
    auto values = t.data();
    auto grads = t.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[j];
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / correction1;
      const double v_hat = vj / correction2;
      values[j] = static_cast<T>(values[j] - lr * m_hat / (std::sqrt(v_hat) + state.config.eps));
    }
  }
}

template <typename T>
ParamList<T> trainable(const ParamList<T>& all) {
  ParamList<T> out;
  for (const auto& p : all) {
    if (p.trainable) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

enum class Schedule { linear, warm_linear };

struct TrainConfig {
  double lr0 = 5e-5;
  int total_epochs = 100;
  int batch_size = 4;
  int image_size = 64;
  std::uint64_t seed = 0;
  LossWeights weights;
  bool use_attention = true;
  bool use_noise = true;
  MaskMode mask_mode = MaskMode::contour;
  SpadeInput spade_input = SpadeInput::features;
  bool use_discriminator = true;
  Schedule schedule = Schedule::linear;
  int depth = 3;
  int base_channels = 8;
  int max_channels = 64;
  int spade_hidden = 16;
  int steps = 1000;           // optimisation steps run by the CLI
  int steps_per_epoch = 0;    // 0: ceil(training frames / batch_size)
  int checkpoint_every = 100;
  std::uint64_t perceptual_seed = 101;
  std::uint64_t identity_seed = 202;
  std::string perceptual_weights;  // optional container to import
  std::string identity_weights;

  void validate() const;
  NetworkConfig network() const;
};

/// `key = value` lines; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text);
TrainConfig read_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& cfg);

/// lr0 * max(0, 1 - epoch / total_epochs); warm-linear holds lr0 for the
/// first half and then decays linearly to 0 at total_epochs.
double lr_schedule(double epoch, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Training

struct Batch {
  Tensor<float> source;
  Tensor<float> target;
  Tensor<float> mask;
};

Batch make_batch(const std::vector<SamplePair>& pairs);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  /// Samples a batch from `split` with the step's data stream, then trains on it.
  LossReport train_step(const Dataset& data, Split split);
  /// One discriminator update on detached fakes, then one generator update.
  LossReport train_step(const Batch& batch);

  Batch sample_batch(const Dataset& data, Split split) const;

  /// Eval-mode generation; the noise stream is seeded by `seed`.
  Tensor<float> reenact(const Tensor<float>& source, const Tensor<float>& mask, std::uint64_t seed = 0);

  std::int64_t step() const { return step_; }
  int epoch() const;
  double current_lr() const { return lr_schedule(epoch(), cfg_); }

  std::vector<Record> to_records() const;
  static Trainer from_records(const std::vector<Record>& records);
  void save(const std::filesystem::path& path) const { write_container(path, to_records()); }
  static Trainer load(const std::filesystem::path& path) { return from_records(read_container(path)); }

  const TrainConfig& config() const { return cfg_; }
  Generator<float>& generator() { return generator_; }
  Discriminator<float>& discriminator() { return discriminator_; }
  const FeatureNet<float>& perceptual_net() const { return perceptual_; }
  const FeatureNet<float>& identity_net() const { return identity_; }

 private:
  TrainConfig cfg_;
  Generator<float> generator_;
  Discriminator<float> discriminator_;
  FeatureNet<float> perceptual_;
  FeatureNet<float> identity_;
  ParamList<float> g_params_;
  ParamList<float> d_params_;
  AdamState<float> g_opt_;
  AdamState<float> d_opt_;
  std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double ssim_mean = 0;
  double fid = 0;
  std::size_t n_images = 0;
};

/// Reenacts every non-first frame of each identity in `split` from its first
/// frame; SSIM against the true frame and desk-FID between the two sets.
EvalReport evaluate(Trainer& trainer, const Dataset& data, Split split, const FeatureNet<float>& extractor);

/// Seed of the fixed random extractor used for desk-FID.
inline constexpr std::uint64_t kFidExtractorSeed = 303;

}  // namespace fargan
