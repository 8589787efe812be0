#include "fargan/train.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fargan {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& value, std::size_t line) {
  N out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ParseError(line, "cannot parse '" + value + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& value, std::size_t line) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ParseError(line, "expected true or false, got '" + value + "'");
}

// Each key knows how to read itself from text and how to echo itself as a
// number for the checkpoint (string-valued keys have no numeric echo).
struct KeySpec {
  std::function<void(TrainConfig&, const std::string&, std::size_t)> parse;
  std::function<std::string(const TrainConfig&)> format;
  std::function<double(const TrainConfig&)> to_number;
  std::function<void(TrainConfig&, double)> from_number;
};

template <typename N>
KeySpec numeric_key(N TrainConfig::*field) {
  return {[field](TrainConfig& c, const std::string& v, std::size_t line) { c.*field = parse_number<N>(v, line); },
          [field](const TrainConfig& c) {
            std::ostringstream os;
            os.precision(17);
            os << c.*field;
            return os.str();
          },
          [field](const TrainConfig& c) { return static_cast<double>(c.*field); },
          [field](TrainConfig& c, double v) { c.*field = static_cast<N>(v); }};
}

KeySpec weight_key(double LossWeights::*field) {
  return {[field](TrainConfig& c, const std::string& v, std::size_t line) {
            c.weights.*field = parse_number<double>(v, line);
          },
          [field](const TrainConfig& c) {
            std::ostringstream os;
            os.precision(17);
            os << c.weights.*field;
            return os.str();
          },
          [field](const TrainConfig& c) { return c.weights.*field; },
          [field](TrainConfig& c, double v) { c.weights.*field = v; }};
}

KeySpec bool_key(bool TrainConfig::*field) {
  return {[field](TrainConfig& c, const std::string& v, std::size_t line) { c.*field = parse_bool(v, line); },
          [field](const TrainConfig& c) { return std::string(c.*field ? "true" : "false"); },
          [field](const TrainConfig& c) { return c.*field ? 1.0 : 0.0; },
          [field](TrainConfig& c, double v) { c.*field = v != 0.0; }};
}

template <typename E>
KeySpec enum_key(E TrainConfig::*field, std::vector<std::string> names) {
  return {[field, names](TrainConfig& c, const std::string& v, std::size_t line) {
            const auto it = std::find(names.begin(), names.end(), v);
            if (it == names.end()) throw ParseError(line, "unknown value '" + v + "'");
            c.*field = static_cast<E>(it - names.begin());
          },
          [field, names](const TrainConfig& c) { return names.at(static_cast<std::size_t>(c.*field)); },
          [field](const TrainConfig& c) { return static_cast<double>(static_cast<int>(c.*field)); },
          [field](TrainConfig& c, double v) { c.*field = static_cast<E>(static_cast<int>(v)); }};
}

KeySpec string_key(std::string TrainConfig::*field) {
  return {[field](TrainConfig& c, const std::string& v, std::size_t) { c.*field = v; },
          [field](const TrainConfig& c) { return c.*field; }, nullptr, nullptr};
}

const std::vector<std::pair<std::string, KeySpec>>& config_keys() {
  static const std::vector<std::pair<std::string, KeySpec>> keys = {
      {"lr0", numeric_key(&TrainConfig::lr0)},
      {"total_epochs", numeric_key(&TrainConfig::total_epochs)},
      {"batch_size", numeric_key(&TrainConfig::batch_size)},
      {"image_size", numeric_key(&TrainConfig::image_size)},
      {"seed", numeric_key(&TrainConfig::seed)},
      {"w_adv", weight_key(&LossWeights::adv)},
      {"w_l1", weight_key(&LossWeights::l1)},
      {"w_p", weight_key(&LossWeights::perceptual)},
      {"w_id", weight_key(&LossWeights::identity)},
      {"use_attention", bool_key(&TrainConfig::use_attention)},
      {"use_noise", bool_key(&TrainConfig::use_noise)},
      {"mask_mode", enum_key(&TrainConfig::mask_mode, {"contour", "binary"})},
      {"spade_input", enum_key(&TrainConfig::spade_input, {"features", "masks"})},
      {"use_discriminator", bool_key(&TrainConfig::use_discriminator)},
      {"schedule", enum_key(&TrainConfig::schedule, {"linear", "warm-linear"})},
      {"depth", numeric_key(&TrainConfig::depth)},
      {"base_channels", numeric_key(&TrainConfig::base_channels)},
      {"max_channels", numeric_key(&TrainConfig::max_channels)},
      {"spade_hidden", numeric_key(&TrainConfig::spade_hidden)},
      {"steps", numeric_key(&TrainConfig::steps)},
      {"steps_per_epoch", numeric_key(&TrainConfig::steps_per_epoch)},
      {"checkpoint_every", numeric_key(&TrainConfig::checkpoint_every)},
      {"perceptual_seed", numeric_key(&TrainConfig::perceptual_seed)},
      {"identity_seed", numeric_key(&TrainConfig::identity_seed)},
      {"perceptual_weights", string_key(&TrainConfig::perceptual_weights)},
      {"identity_weights", string_key(&TrainConfig::identity_weights)},
  };
  return keys;
}

const KeySpec* find_key(const std::string& name) {
  for (const auto& [key, spec] : config_keys()) {
    if (key == name) return &spec;
  }
  return nullptr;
}

FeatureNet<float> load_feature_net(const std::string& path, std::uint64_t seed) {
  if (path.empty()) return FeatureNet<float>::random(seed);
  return feature_net_from_records<float>(read_container(path));
}

// Records whose names start with `prefix.`, prefix stripped.
std::vector<Record> with_prefix(const std::vector<Record>& records, const std::string& prefix) {
  std::vector<Record> out;
  for (const auto& r : records) {
    if (r.name.rfind(prefix + ".", 0) == 0) {
      Record copy = r;
      copy.name = r.name.substr(prefix.size() + 1);
      out.push_back(std::move(copy));
    }
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr0 > 0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be finite and positive");
  if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (steps_per_epoch < 0) throw ConfigError("steps_per_epoch must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  // Seeds are echoed into checkpoints as f64 scalars.
  constexpr std::uint64_t kMaxSeed = std::uint64_t{1} << 53;
  if (seed >= kMaxSeed || perceptual_seed >= kMaxSeed || identity_seed >= kMaxSeed) {
    throw ConfigError("seeds must be below 2^53");
  }
  weights.validate();
  network().validate();
}

NetworkConfig TrainConfig::network() const {
  NetworkConfig net = NetworkConfig::desk();
  net.image_size = image_size;
  net.depth = depth;
  net.base_channels = base_channels;
  net.max_channels = max_channels;
  net.spade_hidden = spade_hidden;
  net.use_attention = use_attention;
  net.use_noise = use_noise;
  net.spade_input = spade_input;
  net.mask_channels = mask_mode == MaskMode::contour ? 3 : 1;
  // Attend at the two finest decoder resolutions below full size.
  net.attention_resolutions.clear();
  for (int k = 1; k <= std::min(2, depth - 1); ++k) net.attention_resolutions.insert(image_size >> k);
  return net;
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const KeySpec* spec = find_key(key);
    if (!spec) throw ParseError(line_no, "unknown key '" + key + "'");
    spec->parse(cfg, value, line_no);
  }
  cfg.validate();
  return cfg;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string format_train_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [key, spec] : config_keys()) out += key + " = " + spec.format(cfg) + "\n";
  return out;
}

double lr_schedule(double epoch, const TrainConfig& cfg) {
  const double total = cfg.total_epochs;
  if (cfg.schedule == Schedule::linear) return cfg.lr0 * std::max(0.0, 1.0 - epoch / total);
  const double half = total / 2.0;
  if (epoch < half) return cfg.lr0;
  return cfg.lr0 * std::max(0.0, (total - epoch) / half);
}

Batch make_batch(const std::vector<SamplePair>& pairs) {
  if (pairs.empty()) throw ContractError("make_batch: no pairs");
  std::vector<Tensor<float>> src, tgt, msk;
  for (const auto& p : pairs) {
    src.push_back(image_to_tensor<float>(p.source));
    tgt.push_back(image_to_tensor<float>(p.target));
    msk.push_back(mask_to_tensor<float>(p.target_mask));
  }
  auto stack = [](const std::vector<Tensor<float>>& items) {
    Shape shape = items.front().shape();
    std::vector<float> values;
    for (const auto& t : items) values.insert(values.end(), t.values().begin(), t.values().end());
    shape[0] = static_cast<Index>(items.size());
    return Tensor<float>(shape, std::move(values));
  };
  return {stack(src), stack(tgt), stack(msk)};
}

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const NetworkConfig net = cfg_.network();
  Rng g_rng = make_rng(cfg_.seed, 0x47);
  Rng d_rng = make_rng(cfg_.seed, 0x44);
  generator_ = Generator<float>(net, g_rng);
  discriminator_ = Discriminator<float>(net, d_rng);
  perceptual_ = load_feature_net(cfg_.perceptual_weights, cfg_.perceptual_seed);
  identity_ = load_feature_net(cfg_.identity_weights, cfg_.identity_seed);
  g_params_ = trainable(generator_.parameters("G"));
  d_params_ = trainable(discriminator_.parameters("D"));
  g_opt_ = AdamState<float>(g_params_, AdamConfig{});
  d_opt_ = AdamState<float>(d_params_, AdamConfig{});
}

int Trainer::epoch() const {
  const std::int64_t per = std::max(1, cfg_.steps_per_epoch);
  return static_cast<int>(step_ / per);
}

Batch Trainer::sample_batch(const Dataset& data, Split split) const {
  Rng rng = make_rng(cfg_.seed, static_cast<std::uint64_t>(2 * step_ + 1000));
  std::vector<SamplePair> pairs;
  for (int i = 0; i < cfg_.batch_size; ++i) pairs.push_back(sample_pair(data, split, rng, cfg_.mask_mode));
  return make_batch(pairs);
}

LossReport Trainer::train_step(const Dataset& data, Split split) { return train_step(sample_batch(data, split)); }

LossReport Trainer::train_step(const Batch& batch) {
  const double lr = current_lr();
  Rng noise_rng = make_rng(cfg_.seed, static_cast<std::uint64_t>(2 * step_ + 1001));
  ForwardContext ctx{Mode::train, &noise_rng, cfg_.use_noise};
  Tensor<float> fake = generator_.forward(batch.source, batch.mask, ctx);

  LossReport report;
  if (cfg_.use_discriminator) {
    for (auto& p : d_params_) p.tensor.zero_grad();
    auto d = total_discriminator_loss(discriminator_.forward(fake.detach(), batch.mask, Mode::train),
                                      discriminator_.forward(batch.target, batch.mask, Mode::train));
    if (!std::isfinite(d.report.total_d)) {
      throw NumericError("non-finite discriminator loss at step " + std::to_string(step_ + 1));
    }
    backward(d.total);
    adam_step(d_params_, d_opt_, lr);
    report.adv_d_fake = d.report.adv_d_fake;
    report.adv_d_real = d.report.adv_d_real;
    report.total_d = d.report.total_d;
  }

  for (auto& p : g_params_) p.tensor.zero_grad();
  Tensor<float> scores;
  if (cfg_.use_discriminator) scores = discriminator_.forward(fake, batch.mask, Mode::eval);
  auto g = total_generator_loss(scores, fake, batch.target, perceptual_, identity_, cfg_.weights);
  if (!std::isfinite(g.report.total_g)) {
    throw NumericError("non-finite generator loss at step " + std::to_string(step_ + 1));
  }
  backward(g.total);
  adam_step(g_params_, g_opt_, lr);

  report.adv_g = g.report.adv_g;
  report.l1 = g.report.l1;
  report.perceptual = g.report.perceptual;
  report.identity = g.report.identity;
  report.total_g = g.report.total_g;
  report.weights = g.report.weights;
  ++step_;
  return report;
}

Tensor<float> Trainer::reenact(const Tensor<float>& source, const Tensor<float>& mask, std::uint64_t seed) {
  NoGradGuard guard;
  Rng rng = make_rng(seed, 0x52);
  return generator_.forward(source, mask, ForwardContext{Mode::eval, &rng, cfg_.use_noise});
}

std::vector<Record> Trainer::to_records() const {
  std::vector<Record> out;
  for (const auto& [key, spec] : config_keys()) {
    if (spec.to_number) out.push_back(make_scalar_record("config." + key, spec.to_number(cfg_)));
  }
  out.push_back(make_scalar_record("trainer.step", static_cast<double>(step_)));
  out.push_back(make_scalar_record("trainer.epoch", static_cast<double>(epoch())));
  for (const auto& p : generator_.parameters("G")) out.push_back(make_record(p.name, p.tensor));
  for (const auto& p : discriminator_.parameters("D")) out.push_back(make_record(p.name, p.tensor));
  ParamList<float> features;
  perceptual_.collect(features, "F.perceptual");
  identity_.collect(features, "F.identity");
  for (const auto& p : features) out.push_back(make_record(p.name, p.tensor));
  auto optimizer = [&](const std::string& prefix, const ParamList<float>& params, const AdamState<float>& st) {
    out.push_back(make_scalar_record(prefix + ".step", static_cast<double>(st.step)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.push_back(make_record(prefix + "." + params[i].name + ".m", Tensor<float>(params[i].tensor.shape(), st.m[i])));
      out.push_back(make_record(prefix + "." + params[i].name + ".v", Tensor<float>(params[i].tensor.shape(), st.v[i])));
    }
  };
  optimizer("optG", g_params_, g_opt_);
  optimizer("optD", d_params_, d_opt_);
  return out;
}

Trainer Trainer::from_records(const std::vector<Record>& records) {
  std::map<std::string, const Record*> by_name;
  for (const auto& r : records) {
    if (!by_name.emplace(r.name, &r).second) throw FormatError(0, "duplicate record '" + r.name + "'");
  }
  auto require = [&](const std::string& name) -> const Record& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(0, "checkpoint is missing record '" + name + "'");
    return *it->second;
  };
  auto scalar = [&](const std::string& name) {
    const Record& r = require(name);
    if (r.element_count() != 1) throw FormatError(0, "record '" + name + "' is not a scalar");
    return r.as_doubles()[0];
  };

  TrainConfig cfg;
  for (const auto& [key, spec] : config_keys()) {
    if (spec.from_number) spec.from_number(cfg, scalar("config." + key));
  }
  // Feature nets come from the checkpoint itself, never from the original paths.
  cfg.perceptual_weights.clear();
  cfg.identity_weights.clear();

  // Everything is restored into a fresh trainer, so a failure leaves no
  // partially loaded state behind.
  Trainer t(cfg);
  t.perceptual_ = feature_net_from_records<float>(with_prefix(records, "F.perceptual"));
  t.identity_ = feature_net_from_records<float>(with_prefix(records, "F.identity"));
  for (auto& p : t.generator_.parameters("G")) assign_record(require(p.name), p.tensor);
  for (auto& p : t.discriminator_.parameters("D")) assign_record(require(p.name), p.tensor);
  auto optimizer = [&](const std::string& prefix, const ParamList<float>& params, AdamState<float>& st) {
    st.step = static_cast<std::int64_t>(scalar(prefix + ".step"));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<float> m(params[i].tensor.shape());
      Tensor<float> v(params[i].tensor.shape());
      assign_record(require(prefix + "." + params[i].name + ".m"), m);
      assign_record(require(prefix + "." + params[i].name + ".v"), v);
      st.m[i] = m.values();
      st.v[i] = v.values();
    }
  };
  optimizer("optG", t.g_params_, t.g_opt_);
  optimizer("optD", t.d_params_, t.d_opt_);
  t.step_ = static_cast<std::int64_t>(scalar("trainer.step"));
  if (t.epoch() != static_cast<int>(scalar("trainer.epoch"))) {
    throw FormatError(0, "trainer.epoch disagrees with trainer.step and steps_per_epoch");
  }
  return t;
}

EvalReport evaluate(Trainer& trainer, const Dataset& data, Split split, const FeatureNet<float>& extractor) {
  const int size = data.image_size();
  if (size != trainer.config().image_size) {
    throw ConfigError("dataset image size " + std::to_string(size) + " differs from checkpoint image_size " +
                      std::to_string(trainer.config().image_size));
  }
  EvalReport report;
  std::vector<std::vector<double>> real_rows, fake_rows;
  double ssim_sum = 0.0;
  for (std::size_t idx = 0; idx < data.manifest.identities.size(); ++idx) {
    const auto& frames = data.frames[idx];
    if (data.manifest.identities[idx].split != split || frames.size() < 2) continue;
    const Tensor<float> source = image_to_tensor<float>(frames[0].image);
    for (std::size_t f = 1; f < frames.size(); ++f) {
      const Tensor<float> target = image_to_tensor<float>(frames[f].image);
      const Tensor<float> mask = mask_to_tensor<float>(rasterize(frames[f].landmarks, size, trainer.config().mask_mode));
      const Tensor<float> fake = trainer.reenact(source, mask, f);
      ssim_sum += ssim(to_unit_range(fake), to_unit_range(target));
      for (auto& row : extractor.pooled(target)) real_rows.push_back(std::move(row));
      for (auto& row : extractor.pooled(fake)) fake_rows.push_back(std::move(row));
      ++report.n_images;
    }
  }
  if (report.n_images < 2) throw ContractError("evaluate: need at least 2 reenacted frames in the split");
  report.ssim_mean = ssim_sum / static_cast<double>(report.n_images);
  report.fid = frechet_distance(frechet_stats_from_rows(real_rows), frechet_stats_from_rows(fake_rows));
  return report;
}

}  // namespace fargan
