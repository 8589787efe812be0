#pragma once

// Paired-frame data: a procedural face renderer standing in for video
// identities, identity splits, pair sampling, and on-disk ingestion.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fargan/image.hpp"
#include "fargan/landmarks.hpp"
#include "fargan/random.hpp"

namespace fargan {

struct IdentityParams {
  double face_width = 0.3;    // head semi-axis, fraction of image width
  double face_height = 0.38;  // head semi-axis, fraction of image height
  double eye_spacing = 0.1;   // eye centre offset from the face midline
  Rgb skin{220, 180, 150};
  Rgb hair{60, 40, 20};
  Rgb background{40, 90, 140};

  /// Deterministic in (dataset seed, identity index).
  static IdentityParams sample(std::uint64_t seed, int identity);
};

struct ExpressionParams {
  double mouth_open = 0.0;   // [0, 1]
  double brow_raise = 0.0;   // [-1, 1]
  double yaw = 0.0;          // [-1, 1], rendered as horizontal offset
  double eye_closure = 0.0;  // [0, 1]

  void validate() const;
  static ExpressionParams sample(std::uint64_t seed, int identity, int frame);
};

struct RenderedFace {
  Image8 image;
  LandmarkSet landmarks;
};

/// Flat-shaded face over a solid background plus its exact 68 landmarks.
RenderedFace synth_render(const IdentityParams& id, const ExpressionParams& ex, int size);

/// Colours the renderer uses for facial features (for consistency checks).
struct FeaturePalette {
  static Rgb eye_white() { return {245, 245, 245}; }
  static Rgb eye_line() { return {20, 20, 20}; }
  static Rgb lips() { return {170, 40, 50}; }
  static Rgb mouth_cavity() { return {60, 10, 15}; }
  static Rgb brow(const IdentityParams& id);
  static Rgb nose(const IdentityParams& id);
};

enum class Split { train, test };

struct IdentityEntry {
  int id = 0;
  std::string name;
  std::vector<std::string> frames;  // frame stems, e.g. "f0003"
  Split split = Split::train;
  friend bool operator==(const IdentityEntry&, const IdentityEntry&) = default;
};

struct DatasetManifest {
  std::vector<IdentityEntry> identities;
  std::vector<std::string> warnings;

  std::vector<int> identities_in(Split split) const;
  std::size_t frame_count() const;
  /// Train and test identity sets must be disjoint; ids unique.
  void validate() const;
  /// One line per frame: "<identity>/<frame> <identity id> <train|test>".
  std::string serialize() const;
  static DatasetManifest parse(const std::string& text);
};

std::string identity_name(int id);
std::string frame_name(int index);

/// floor(0.8 n) identities to train, the rest to test, via a seeded shuffle.
DatasetManifest split_identities(int n_identities, std::uint64_t seed);

struct FrameData {
  Image8 image;
  LandmarkSet landmarks;
};

struct SyntheticSpec {
  int identities = 10;
  int frames = 8;
  int size = 64;
  std::uint64_t seed = 0;
};

/// Manifest plus decoded frames, indexed like manifest.identities.
struct Dataset {
  DatasetManifest manifest;
  std::vector<std::vector<FrameData>> frames;

  static Dataset synthetic(const SyntheticSpec& spec);
  /// Loads every frame listed in `manifest` from root/<identity>/<frame>.{png,lms}.
  static Dataset load(const DatasetManifest& manifest, const std::filesystem::path& root);
  int image_size() const;
};

/// Writes the directory layout and manifest.txt.
void write_dataset(const Dataset& data, const std::filesystem::path& root);

/// Scans root/<identity>/<frame>.png with sibling .lms files. Split
/// assignments come from root/manifest.txt when present, otherwise from
/// split_identities(n, 0).
DatasetManifest ingest_directory(const std::filesystem::path& root);

struct SamplePair {
  Image8 source;
  Image8 target;
  MaskImage target_mask;
  int identity = 0;
  int source_frame = 0;
  int target_frame = 0;
};

/// Uniform identity from `split` (among those with >= 2 frames), then two
/// distinct uniform frames.
SamplePair sample_pair(const Dataset& data, Split split, Rng& rng, MaskMode mode);

}  // namespace fargan
