#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fargan/train.hpp"

namespace fs = std::filesystem;
using namespace fargan;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

// Config-file mistakes are reported as usage errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("data directory " + dir.string() + " does not exist");
  DatasetManifest manifest = ingest_directory(dir);
  for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << "\n";
  return Dataset::load(manifest, dir);
}

Split parse_split(const std::string& s) { return s == "train" ? Split::train : Split::test; }

int run_make_data(const fs::path& out, const SyntheticSpec& spec) {
  const Dataset data = Dataset::synthetic(spec);
  for (const auto& w : data.manifest.warnings) std::cerr << "warning: " << w << "\n";
  write_dataset(data, out);
  std::cout << "wrote " << data.manifest.frame_count() << " frames to " << out.string() << "\n";
  return 0;
}

int run_rasterize(const fs::path& landmarks, const std::string& mode, int size, const fs::path& out) {
  const LandmarkSet lm = read_landmarks(landmarks);
  write_png(out, mask_to_png_image(rasterize(lm, size, mode == "binary" ? MaskMode::binary : MaskMode::contour)));
  return 0;
}

int run_train(const fs::path& config_path, const fs::path& data_dir, const fs::path& out, bool resume) {
  TrainConfig cfg;
  try {
    cfg = read_train_config(config_path);
  } catch (const ParseError& e) {
    throw UsageError(config_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw UsageError(config_path.string() + ": " + e.what());
  }
  const Dataset data = load_dataset(data_dir);
  if (data.image_size() != cfg.image_size) {
    throw UsageError("dataset frames are " + std::to_string(data.image_size()) + " px, config image_size is " +
                     std::to_string(cfg.image_size));
  }
  if (cfg.steps_per_epoch == 0) {
    std::size_t frames = 0;
    for (std::size_t i = 0; i < data.frames.size(); ++i) {
      if (data.manifest.identities[i].split == Split::train) frames += data.frames[i].size();
    }
    cfg.steps_per_epoch = static_cast<int>(std::max<std::size_t>(1, (frames + cfg.batch_size - 1) / cfg.batch_size));
  }
  fs::create_directories(out);
  const fs::path checkpoint = out / "checkpoint.farg";
  Trainer trainer = resume && fs::exists(checkpoint) ? Trainer::load(checkpoint) : Trainer(cfg);

  bool have_checkpoint = resume && fs::exists(checkpoint);
  std::printf("step,lr,adv_g,l1,perceptual,identity,total_g,total_d\n");
  while (trainer.step() < cfg.steps) {
    const double lr = trainer.current_lr();
    LossReport r;
    try {
      r = trainer.train_step(data, Split::train);
    } catch (const NumericError& e) {
      std::cerr << "error: " << e.what() << "\n";
      std::cerr << "last good checkpoint: " << (have_checkpoint ? checkpoint.string() : std::string("none")) << "\n";
      return kRuntimeError;
    }
    std::printf("%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(trainer.step()), lr, r.adv_g, r.l1,
                r.perceptual, r.identity, r.total_g, r.total_d);
    std::fflush(stdout);
    if (cfg.checkpoint_every > 0 && trainer.step() % cfg.checkpoint_every == 0) {
      trainer.save(checkpoint);
      have_checkpoint = true;
    }
  }
  trainer.save(checkpoint);
  return 0;
}

int run_reenact(const fs::path& checkpoint, const fs::path& source, const fs::path& landmarks, const fs::path& out) {
  Trainer trainer = Trainer::load(checkpoint);
  const int size = trainer.config().image_size;
  const Image8 src = read_png(source);
  if (src.width != size || src.height != size || src.channels != 3) {
    throw UsageError("source must be a " + std::to_string(size) + "x" + std::to_string(size) + " RGB PNG");
  }
  const MaskImage mask = rasterize(read_landmarks(landmarks), size, trainer.config().mask_mode);
  const Tensor<float> fake = trainer.reenact(image_to_tensor<float>(src), mask_to_tensor<float>(mask));
  write_png(out, tensor_to_image(fake));
  return 0;
}

int run_evaluate(const fs::path& checkpoint, const fs::path& data_dir, const std::string& split) {
  Trainer trainer = Trainer::load(checkpoint);
  const Dataset data = load_dataset(data_dir);
  const EvalReport r = evaluate(trainer, data, parse_split(split), FeatureNet<float>::random(kFidExtractorSeed));
  std::printf("ssim_mean=%.9g\nfid=%.9g\nn_images=%zu\n", r.ssim_mean, r.fid, r.n_images);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Landmark-driven face reenactment"};
  app.require_subcommand(1);

  auto* make_data = app.add_subcommand("make-data", "Render a synthetic paired-frame dataset");
  fs::path md_out;
  SyntheticSpec spec;
  make_data->add_option("--out", md_out)->required();
  make_data->add_option("--identities", spec.identities)->required()->check(CLI::PositiveNumber);
  make_data->add_option("--frames", spec.frames)->required()->check(CLI::PositiveNumber);
  make_data->add_option("--size", spec.size)->required()->check(CLI::Range(32, 4096));
  make_data->add_option("--seed", spec.seed)->required();

  auto* rast = app.add_subcommand("rasterize", "Draw a landmark file as a mask PNG");
  fs::path r_landmarks, r_out;
  std::string r_mode;
  int r_size = 0;
  rast->add_option("--landmarks", r_landmarks)->required()->check(CLI::ExistingFile);
  rast->add_option("--mode", r_mode)->required()->check(CLI::IsMember({"contour", "binary"}));
  rast->add_option("--size", r_size)->required()->check(CLI::Range(16, 4096));
  rast->add_option("--out", r_out)->required();

  auto* train = app.add_subcommand("train", "Train from a config file");
  fs::path t_config, t_data, t_out;
  bool t_resume = false;
  train->add_option("--config", t_config)->required()->check(CLI::ExistingFile);
  train->add_option("--data", t_data)->required();
  train->add_option("--out", t_out)->required();
  train->add_flag("--resume", t_resume, "Continue from OUT/checkpoint.farg if present");

  auto* reenact = app.add_subcommand("reenact", "Drive a source face with target landmarks");
  fs::path re_ckpt, re_source, re_landmarks, re_out;
  reenact->add_option("--checkpoint", re_ckpt)->required()->check(CLI::ExistingFile);
  reenact->add_option("--source", re_source)->required()->check(CLI::ExistingFile);
  reenact->add_option("--landmarks", re_landmarks)->required()->check(CLI::ExistingFile);
  reenact->add_option("--out", re_out)->required();

  auto* eval = app.add_subcommand("evaluate", "SSIM and desk-FID on a dataset split");
  fs::path ev_ckpt, ev_data;
  std::string ev_split = "test";
  eval->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", ev_data)->required();
  eval->add_option("--split", ev_split)->check(CLI::IsMember({"train", "test"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*make_data) return run_make_data(md_out, spec);
    if (*rast) return run_rasterize(r_landmarks, r_mode, r_size, r_out);
    if (*train) return run_train(t_config, t_data, t_out, t_resume);
    if (*reenact) return run_reenact(re_ckpt, re_source, re_landmarks, re_out);
    if (*eval) return run_evaluate(ev_ckpt, ev_data, ev_split);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
