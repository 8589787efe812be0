#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "fargan/dataset.hpp"

namespace fargan {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("fargan_ds_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

bool colour_near(const Image8& img, Point2 p, Rgb colour, int radius) {
  const int cx = to_pixel(p.x, img.width), cy = to_pixel(p.y, img.height);
  for (int y = std::max(0, cy - radius); y <= std::min(img.height - 1, cy + radius); ++y)
    for (int x = std::max(0, cx - radius); x <= std::min(img.width - 1, cx + radius); ++x) {
      if (img.at(x, y, 0) == colour.r && img.at(x, y, 1) == colour.g && img.at(x, y, 2) == colour.b) return true;
    }
  return false;
}

TEST(SynthRender, DeterministicForFixedParameters) {
  const IdentityParams id = IdentityParams::sample(3, 1);
  const ExpressionParams ex = ExpressionParams::sample(3, 1, 4);
  const RenderedFace a = synth_render(id, ex, 64);
  const RenderedFace b = synth_render(id, ex, 64);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.landmarks.points, b.landmarks.points);
}

TEST(SynthRender, MouthOpeningSeparatesInnerLips) {
  const IdentityParams id;
  ExpressionParams closed, open;
  open.mouth_open = 1.0;
  const auto gap = [&](const ExpressionParams& ex) {
    const auto& p = synth_render(id, ex, 64).landmarks.points;
    return p[66].y - p[62].y;
  };
  EXPECT_GT(gap(open), gap(closed) + 2.0 / 64);
}

TEST(SynthRender, LandmarksSitOnDrawnFeatures) {
  for (int identity = 0; identity < 4; ++identity) {
    const IdentityParams id = IdentityParams::sample(11, identity);
    const RenderedFace face = synth_render(id, ExpressionParams::sample(11, identity, 0), 64);
    for (std::size_t i = 48; i < 60; ++i) {
      EXPECT_TRUE(colour_near(face.image, face.landmarks.points[i], FeaturePalette::lips(), 2)) << "lip " << i;
    }
    for (std::size_t i = 36; i < 48; ++i) {
      EXPECT_TRUE(colour_near(face.image, face.landmarks.points[i], FeaturePalette::eye_line(), 2)) << "eye " << i;
    }
    for (std::size_t i = 17; i < 27; ++i) {
      EXPECT_TRUE(colour_near(face.image, face.landmarks.points[i], FeaturePalette::brow(id), 2)) << "brow " << i;
    }
  }
}

TEST(SynthRender, RejectsOutOfRangeExpressionAndTinySize) {
  ExpressionParams ex;
  ex.yaw = 1.5;
  EXPECT_THROW(synth_render(IdentityParams{}, ex, 64), ContractError);
  EXPECT_THROW(synth_render(IdentityParams{}, ExpressionParams{}, 16), ContractError);
}

TEST(Split, TenIdentitiesSplitEightTwo) {
  const DatasetManifest m = split_identities(10, 4);
  EXPECT_EQ(m.identities_in(Split::train).size(), 8u);
  EXPECT_EQ(m.identities_in(Split::test).size(), 2u);
  EXPECT_TRUE(m.warnings.empty());
}

TEST(Split, SingleIdentityGoesToTestWithWarning) {
  const DatasetManifest m = split_identities(1, 4);
  EXPECT_EQ(m.identities_in(Split::train).size(), 0u);
  EXPECT_EQ(m.identities_in(Split::test).size(), 1u);
  EXPECT_FALSE(m.warnings.empty());
}

TEST(Split, DisjointAndCompleteOverSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int n = 2 + static_cast<int>(seed % 17);
    const DatasetManifest m = split_identities(n, seed);
    std::set<int> train, test;
    for (int i : m.identities_in(Split::train)) train.insert(i);
    for (int i : m.identities_in(Split::test)) test.insert(i);
    for (int i : train) EXPECT_FALSE(test.count(i)) << "seed " << seed;
    EXPECT_EQ(train.size() + test.size(), static_cast<std::size_t>(n));
    EXPECT_EQ(train.size(), static_cast<std::size_t>(0.8 * n));
  }
}

TEST(SamplePair, FramesAlwaysDiffer) {
  const Dataset data = Dataset::synthetic({4, 3, 32, 2});
  Rng rng = make_rng(8);
  for (int i = 0; i < 10000; ++i) {
    const SamplePair p = sample_pair(data, Split::train, rng, MaskMode::binary);
    ASSERT_NE(p.source_frame, p.target_frame);
  }
}

TEST(SamplePair, OrderedFramePairsAreUniform) {
  SyntheticSpec spec{5, 4, 32, 9};
  const Dataset data = Dataset::synthetic(spec);
  const auto train = data.manifest.identities_in(Split::train);
  ASSERT_EQ(train.size(), 4u);
  Rng rng = make_rng(10);
  std::map<std::tuple<int, int, int>, int> counts;
  constexpr int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) {
    const SamplePair p = sample_pair(data, Split::train, rng, MaskMode::binary);
    ++counts[{p.identity, p.source_frame, p.target_frame}];
  }
  const int cells = 4 * 4 * 3;
  ASSERT_EQ(counts.size(), static_cast<std::size_t>(cells));
  const double expected = static_cast<double>(kDraws) / cells;
  double chi2 = 0;
  for (const auto& [key, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  // 47 degrees of freedom; 99.9th percentile is about 82.7.
  EXPECT_LT(chi2, 82.7);
}

TEST(SamplePair, MaskFollowsTargetFrame) {
  const Dataset data = Dataset::synthetic({3, 3, 32, 5});
  Rng rng = make_rng(3);
  const SamplePair p = sample_pair(data, Split::train, rng, MaskMode::contour);
  const auto& entries = data.manifest.identities;
  std::size_t idx = 0;
  while (entries[idx].id != p.identity) ++idx;
  EXPECT_EQ(p.target, data.frames[idx][p.target_frame].image);
  EXPECT_EQ(p.target_mask.pixels, rasterize_contour(data.frames[idx][p.target_frame].landmarks, 32).pixels);
}

TEST(SamplePair, SplitWithoutPairsIsAnError) {
  const Dataset data = Dataset::synthetic({1, 3, 32, 5});
  Rng rng = make_rng(3);
  EXPECT_THROW(sample_pair(data, Split::train, rng, MaskMode::binary), std::runtime_error);
  const Dataset single = Dataset::synthetic({3, 1, 32, 5});
  EXPECT_THROW(sample_pair(single, Split::train, rng, MaskMode::binary), std::runtime_error);
}

TEST(Manifest, SerializeParseRoundTrip) {
  const Dataset data = Dataset::synthetic({5, 2, 32, 1});
  const DatasetManifest back = DatasetManifest::parse(data.manifest.serialize());
  EXPECT_EQ(back.identities, data.manifest.identities);
}

TEST(Manifest, BadSplitReportsLine) {
  try {
    DatasetManifest::parse("id0000/f0000 0 train\nid0001/f0000 1 valid\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Ingest, TwoIdentitiesThreeFrames) {
  TempDir dir;
  write_dataset(Dataset::synthetic({2, 3, 32, 6}), dir.path());
  const DatasetManifest m = ingest_directory(dir.path());
  EXPECT_EQ(m.frame_count(), 6u);
  EXPECT_EQ(m.identities.size(), 2u);
}

TEST(Ingest, FrameWithoutLandmarksIsSkippedWithWarning) {
  TempDir dir;
  write_dataset(Dataset::synthetic({2, 3, 32, 6}), dir.path());
  fs::remove(dir.path() / "id0001" / "f0002.lms");
  const DatasetManifest m = ingest_directory(dir.path());
  EXPECT_EQ(m.frame_count(), 5u);
  ASSERT_FALSE(m.warnings.empty());
  EXPECT_NE(m.warnings.front().find("f0002"), std::string::npos);
}

TEST(Ingest, WrittenDatasetLoadsBackIdentically) {
  TempDir dir;
  const Dataset original = Dataset::synthetic({3, 2, 32, 12});
  write_dataset(original, dir.path());
  const Dataset back = Dataset::load(ingest_directory(dir.path()), dir.path());
  EXPECT_EQ(back.manifest.identities, original.manifest.identities);
  ASSERT_EQ(back.frames.size(), original.frames.size());
  for (std::size_t i = 0; i < back.frames.size(); ++i) {
    for (std::size_t f = 0; f < back.frames[i].size(); ++f) {
      EXPECT_EQ(back.frames[i][f].image, original.frames[i][f].image);
      for (std::size_t k = 0; k < kLandmarkCount; ++k) {
        EXPECT_NEAR(back.frames[i][f].landmarks.points[k].x, original.frames[i][f].landmarks.points[k].x, 1e-6);
      }
    }
  }
}

TEST(Ingest, EmptyOrMissingRootIsAnError) {
  TempDir dir;
  EXPECT_THROW(ingest_directory(dir.path()), std::runtime_error);
  EXPECT_THROW(ingest_directory(dir.path() / "absent"), std::runtime_error);
}

}  // namespace
}  // namespace fargan
