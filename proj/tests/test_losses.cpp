#include <gtest/gtest.h>

#include "fargan/losses.hpp"

namespace fargan {
namespace {

Tensor<double> filled(Shape shape, double v) { return Tensor<double>(std::move(shape), v); }

TEST(AdversarialLoss, GeneratorExamples) {
  EXPECT_DOUBLE_EQ(adv_g(filled({2, 1, 3, 3}, 1.0)).item(), 0.0);
  EXPECT_DOUBLE_EQ(adv_g(filled({2, 1, 3, 3}, 0.0)).item(), 1.0);
  EXPECT_DOUBLE_EQ(adv_g(Tensor<double>(Shape{2}, std::vector<double>{0.5, 1.5})).item(), 0.25);
}

TEST(AdversarialLoss, DiscriminatorExamples) {
  EXPECT_DOUBLE_EQ(adv_d(filled({4}, 0.0), filled({4}, 1.0)).item(), 0.0);
  EXPECT_DOUBLE_EQ(adv_d(filled({4}, 1.0), filled({4}, 0.0)).item(), 2.0);
  EXPECT_DOUBLE_EQ(adv_d(filled({1}, 0.5), filled({1}, 0.5)).item(), 0.5);
}

TEST(AdversarialLoss, EmptyScoresAreContractViolations) {
  EXPECT_THROW(adv_g(Tensor<double>()), ContractError);
  EXPECT_THROW(adv_d(Tensor<double>(), filled({1}, 1.0)), ContractError);
}

TEST(L1Loss, Examples) {
  Rng rng = make_rng(1);
  Tensor<double> x(Shape{2, 3, 4, 4}, normal_vector<double>(rng, 96));
  EXPECT_DOUBLE_EQ(l1_loss(x, x).item(), 0.0);
  EXPECT_NEAR(l1_loss(add_scalar(x, 0.5), x).item(), 0.5, 1e-15);
  Tensor<double> y(Shape{2, 3, 4, 4}, normal_vector<double>(rng, 96));
  double acc = 0;
  for (Index i = 0; i < 96; ++i) acc += std::abs(x[i] - y[i]);
  EXPECT_NEAR(l1_loss(x, y).item(), acc / 96, 1e-7);
}

TEST(FeatureLoss, ZeroAtTargetAndMonotoneInNoise) {
  const auto net = FeatureNet<double>::random(5);
  Rng rng = make_rng(2);
  Tensor<double> x(Shape{2, 3, 16, 16}, uniform_vector<double>(rng, 2 * 3 * 256, -1, 1));
  EXPECT_DOUBLE_EQ(feature_loss(x, x, net).item(), 0.0);
  const std::vector<double> noise = normal_vector<double>(rng, 2 * 3 * 256);
  double previous = 0.0;
  for (double sigma : {0.01, 0.1, 0.5}) {
    Tensor<double> perturbed(x.shape(), x.values());
    for (std::size_t i = 0; i < noise.size(); ++i) perturbed.values()[i] += sigma * noise[i];
    const double loss = feature_loss(perturbed, x, net).item();
    EXPECT_GE(loss, previous) << "sigma " << sigma;
    previous = loss;
  }
}

TEST(FeatureLoss, IdentityNetReducesToPixelL1) {
  const auto net = FeatureNet<double>::identity(3);
  Rng rng = make_rng(3);
  Tensor<double> x(Shape{1, 3, 5, 5}, normal_vector<double>(rng, 75));
  Tensor<double> y(Shape{1, 3, 5, 5}, normal_vector<double>(rng, 75));
  EXPECT_NEAR(feature_loss(x, y, net).item(), l1_loss(x, y).item(), 1e-15);
}

TEST(FeatureNet, FrozenAgainstGradients) {
  const auto net = FeatureNet<double>::random(6, {4, 4});
  Tensor<double> x(Shape{1, 3, 8, 8}, 0.3, true);
  backward(feature_loss(x, Tensor<double>(Shape{1, 3, 8, 8}, -0.2), net));
  for (const auto& s : net.stages()) EXPECT_FALSE(s.weight.requires_grad());
}

class TotalLoss : public ::testing::Test {
 protected:
  FeatureNet<double> pnet = FeatureNet<double>::random(11, {4, 8});
  FeatureNet<double> inet = FeatureNet<double>::random(12, {4, 8});
  Rng rng = make_rng(4);
};

TEST_F(TotalLoss, ZeroAtPerfectFoolingAndReconstruction) {
  Tensor<double> x(Shape{1, 3, 8, 8}, normal_vector<double>(rng, 192));
  const auto r = total_generator_loss(filled({1, 1, 1, 1}, 1.0), x, x, pnet, inet, LossWeights{});
  EXPECT_DOUBLE_EQ(r.report.total_g, 0.0);
  EXPECT_DOUBLE_EQ(r.total.item(), 0.0);
}

TEST_F(TotalLoss, EchoesWeightsAndRecombines) {
  Tensor<double> x(Shape{2, 3, 8, 8}, normal_vector<double>(rng, 384));
  Tensor<double> y(Shape{2, 3, 8, 8}, normal_vector<double>(rng, 384));
  Tensor<double> s(Shape{2, 1, 3, 3}, normal_vector<double>(rng, 18));
  const auto r = total_generator_loss(s, x, y, pnet, inet, LossWeights{});
  EXPECT_EQ(r.report.weights.l1, 20.0);
  EXPECT_EQ(r.report.weights.perceptual, 2.0);
  EXPECT_EQ(r.report.weights.identity, 0.2);
  EXPECT_NEAR(r.report.total_g, r.total.item(), 1e-7);
  EXPECT_NEAR(r.report.total_g, r.report.recombined_g(), 1e-7);
}

TEST_F(TotalLoss, NoDiscriminatorDropsAdversarialTerm) {
  Tensor<double> x(Shape{1, 3, 8, 8}, normal_vector<double>(rng, 192));
  Tensor<double> y(Shape{1, 3, 8, 8}, normal_vector<double>(rng, 192));
  const auto r = total_generator_loss(Tensor<double>(), x, y, pnet, inet, LossWeights{});
  EXPECT_EQ(r.report.adv_g, 0.0);
  EXPECT_EQ(r.report.weights.adv, 0.0);
  EXPECT_NEAR(r.report.total_g, 20 * r.report.l1 + 2 * r.report.perceptual + 0.2 * r.report.identity, 1e-9);
}

TEST_F(TotalLoss, NegativeWeightIsConfigError) {
  Tensor<double> x(Shape{1, 3, 8, 8}, 0.0);
  LossWeights w;
  w.l1 = -1;
  EXPECT_THROW(total_generator_loss(Tensor<double>(), x, x, pnet, inet, w), ConfigError);
}

}  // namespace
}  // namespace fargan
