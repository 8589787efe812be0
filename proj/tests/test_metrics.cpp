#include <gtest/gtest.h>

#include "fargan/metrics.hpp"

namespace fargan {
namespace {

Tensor<double> random_image(Rng& rng, Index size = 32) {
  Tensor<double> t(Shape{1, 3, size, size});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Smooth structure so SSIM has something to compare.
  for (Index c = 0; c < 3; ++c) {
    const double fx = u(rng) * 0.5, fy = u(rng) * 0.5, phase = u(rng) * 6.0;
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x) t.at(0, c, y, x) = 0.5 + 0.4 * std::sin(fx * x + fy * y + phase);
  }
  return t;
}

Tensor<double> add_noise(const Tensor<double>& x, double sigma, Rng& rng) {
  Tensor<double> out = x.detach();
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& v : out.values()) v = std::clamp(v + n(rng), 0.0, 1.0);
  return out;
}

FrechetStats stats(std::vector<double> mu, std::vector<double> diag) {
  FrechetStats s;
  s.mu = Eigen::Map<Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size()));
  s.sigma = Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(diag.data(), static_cast<Eigen::Index>(diag.size()))).asDiagonal();
  return s;
}

TEST(Ssim, GaussianWindowIsNormalised) {
  const auto taps = gaussian_taps(11, 1.5);
  ASSERT_EQ(taps.size(), 11u);
  double total = 0;
  for (double t : taps) total += t;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(taps[0], taps[10]);
}

TEST(Ssim, IdenticalImagesScoreOne) {
  Rng rng = make_rng(1);
  const Tensor<double> x = random_image(rng);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-9);
}

TEST(Ssim, InvertedHalvesScoreLow) {
  Tensor<double> a(Shape{1, 1, 32, 32}, 0.0);
  for (Index y = 0; y < 32; ++y)
    for (Index x = 16; x < 32; ++x) a.at(0, 0, y, x) = 1.0;
  Tensor<double> b = a.detach();
  for (auto& v : b.values()) v = 1.0 - v;
  EXPECT_LT(ssim(a, b), 0.1);
}

TEST(Ssim, SymmetricAndDecreasingWithNoise) {
  Rng rng = make_rng(2);
  const Tensor<double> x = random_image(rng);
  const Tensor<double> y = add_noise(x, 0.1, rng);
  EXPECT_NEAR(ssim(x, y), ssim(y, x), 1e-12);
  double previous = 1.0;
  for (double sigma : {0.05, 0.1, 0.2}) {
    Rng noise = make_rng(3);
    const double s = ssim(x, add_noise(x, sigma, noise));
    EXPECT_LT(s, previous) << sigma;
    previous = s;
  }
}

TEST(Ssim, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(ssim(Tensor<double>(Shape{1, 3, 8, 8}), Tensor<double>(Shape{1, 3, 8, 9})), DimensionError);
}

TEST(FrechetStats, MatchesScalarOracle) {
  Rng rng = make_rng(4);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> rows(7, std::vector<double>(3));
  for (auto& r : rows)
    for (auto& v : r) v = n(rng);
  const FrechetStats s = frechet_stats_from_rows(rows);
  for (int i = 0; i < 3; ++i) {
    double m = 0;
    for (const auto& r : rows) m += r[i] / 7.0;
    EXPECT_NEAR(s.mu(i), m, 1e-12);
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double c = 0;
      for (const auto& r : rows) c += (r[i] - s.mu(i)) * (r[j] - s.mu(j));
      EXPECT_NEAR(s.sigma(i, j), c / 6.0, 1e-12);
    }
}

TEST(FrechetStats, IdenticalRowsHaveZeroCovariance) {
  const FrechetStats s = frechet_stats_from_rows({{1, 2}, {1, 2}, {1, 2}});
  EXPECT_EQ(s.sigma.norm(), 0.0);
}

TEST(FrechetStats, TwoRowsGiveMidpoint) {
  const FrechetStats s = frechet_stats_from_rows({{0, 4}, {2, 0}});
  EXPECT_DOUBLE_EQ(s.mu(0), 1.0);
  EXPECT_DOUBLE_EQ(s.mu(1), 2.0);
}

TEST(FrechetStats, FewerThanTwoImagesIsAnError) {
  EXPECT_THROW(frechet_stats_from_rows({{1, 2}}), ContractError);
  EXPECT_THROW(feature_stats(Tensor<double>(Shape{1, 3, 8, 8}), FeatureNet<double>::random(1)), ContractError);
}

TEST(FrechetDistance, SelfDistanceIsZero) {
  Rng rng = make_rng(5);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> rows(20, std::vector<double>(4));
  for (auto& r : rows)
    for (auto& v : r) v = n(rng);
  const FrechetStats s = frechet_stats_from_rows(rows);
  EXPECT_LT(std::abs(frechet_distance(s, s)), 1e-6);
}

TEST(FrechetDistance, ShiftedMeanAddsSquaredNorm) {
  const FrechetStats a = stats({0, 0, 0}, {1, 2, 3});
  const FrechetStats b = stats({1, -2, 0.5}, {1, 2, 3});
  EXPECT_NEAR(frechet_distance(a, b), 1 + 4 + 0.25, 1e-8);
}

TEST(FrechetDistance, SwappedDiagonalCovariances) {
  EXPECT_NEAR(frechet_distance(stats({0, 0}, {1, 4}), stats({0, 0}, {4, 1})), 2.0, 1e-8);
}

TEST(FrechetDistance, SymmetricAndDimensionChecked) {
  const FrechetStats a = stats({0, 1}, {2, 3});
  const FrechetStats b = stats({1, 1}, {1, 5});
  EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-10);
  EXPECT_THROW(frechet_distance(a, stats({0, 0, 0}, {1, 1, 1})), DimensionError);
}

}  // namespace
}  // namespace fargan
