#include <gtest/gtest.h>

#include <cmath>

#include "pathmamba/gradcheck_suite.hpp"
#include "pathmamba/supervision.hpp"

using namespace pathmamba;
using Td = Tensor<double>;

namespace {

BinaryMask mask_of(std::size_t h, std::size_t w, std::initializer_list<int> bits) {
  BinaryMask m(h, w);
  std::size_t i = 0;
  for (int b : bits) m.bits[i++] = static_cast<std::uint8_t>(b);
  return m;
}

BinaryMask random_mask(std::size_t h, std::size_t w, double p, SplitMix64& rng) {
  BinaryMask m(h, w);
  for (auto& b : m.bits) b = rng.bernoulli(p) ? 1 : 0;
  return m;
}

Td rand_logits(std::size_t h, std::size_t w, SplitMix64& rng) {
  Td t({h, w, 1});
  for (auto& v : t.vec()) v = rng.uniform(-4, 4);
  return t;
}

double softplus_ref(double x) { return std::log1p(std::exp(x)); }

}  // namespace

TEST(Bce, Examples) {
  const auto t = mask_of(1, 2, {1, 0});
  EXPECT_NEAR(bce_loss(Td({1, 2, 1}, 0.0), t)[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_loss(Td({1, 2, 1}, {1000.0, -1000.0}), t)[0], 0.0, 1e-12);
  EXPECT_NEAR(bce_loss(Td({1, 2, 1}, {0.0, 2.0}), t)[0], (std::log(2.0) + softplus_ref(2.0)) / 2, 1e-15);
}

TEST(Bce, ShapeMismatch) {
  EXPECT_THROW(bce_loss(Td({2, 2, 1}), BinaryMask(2, 3)), DimensionError);
  EXPECT_THROW(dice_loss(Td({3, 1}), BinaryMask(2, 2), 1.0), DimensionError);
}

TEST(Focal, Examples) {
  EXPECT_NEAR(focal_loss(Td({1, 1, 1}, 0.0), mask_of(1, 1, {1}), 2.0, 0.25)[0], 0.25 * 0.25 * std::log(2.0),
              1e-15);
  EXPECT_NEAR(focal_loss(Td({1, 2, 1}, {50.0, -50.0}), mask_of(1, 2, {1, 0}), 2.0, 0.25)[0], 0.0, 1e-12);
}

TEST(Focal, ReducesToHalfBce) {
  SplitMix64 rng(1);
  for (int k = 0; k < 50; ++k) {
    const Td z = rand_logits(5, 6, rng);
    const BinaryMask t = random_mask(5, 6, 0.3, rng);
    EXPECT_NEAR(focal_loss(z, t, 0.0, 0.5)[0], 0.5 * bce_loss(z, t)[0], 1e-7);
  }
}

TEST(Dice, Examples) {
  const BinaryMask t = mask_of(2, 2, {1, 0, 0, 1});
  EXPECT_NEAR(dice_loss(Td({2, 2, 1}, {800.0, -800.0, -800.0, 800.0}), t, 1.0)[0], 0.0, 1e-15);
  EXPECT_NEAR(dice_loss(Td({2, 2, 1}, 0.0), BinaryMask(2, 2), 1.0)[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(dice_loss(Td({2, 2, 1}, -800.0), BinaryMask(2, 2), 1.0)[0], 0.0, 1e-15);
}

TEST(Combined, WeightsSelectTerms) {
  SplitMix64 rng(2);
  const Td z = rand_logits(4, 4, rng);
  const BinaryMask t = random_mask(4, 4, 0.4, rng);
  LossConfig c;
  const double focal = focal_loss(z, t, 2.0, 0.25)[0], dice = dice_loss(z, t, 1.0)[0];
  EXPECT_NEAR(combined_loss(z, t, c)[0], focal + dice, 1e-15);
  c.weight_region = 0;
  EXPECT_NEAR(combined_loss(z, t, c)[0], focal, 1e-15);
  c.weight_region = 1;
  c.weight_pixel = 0;
  EXPECT_NEAR(combined_loss(z, t, c)[0], dice, 1e-15);
  c.weight_pixel = 1;
  c.variant = LossVariant::bce_dice;
  EXPECT_NEAR(combined_loss(z, t, c)[0], bce_loss(z, t)[0] + dice, 1e-15);
}

TEST(Combined, DefaultsMatchSupplementConfiguration) {
  const LossConfig c;
  EXPECT_EQ(c.variant, LossVariant::focal_dice);
  EXPECT_EQ(c.weight_pixel, 1.0);
  EXPECT_EQ(c.weight_region, 1.0);
  LossConfig bad;
  bad.focal_gamma = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_loss_variant("hinge"), ParseError);
}

TEST(Losses, NonnegativeAndDiceBelowOne) {
  SplitMix64 rng(3);
  for (int k = 0; k < 100; ++k) {
    const Td z = rand_logits(4, 5, rng);
    const BinaryMask t = random_mask(4, 5, rng.uniform(), rng);
    EXPECT_GE(bce_loss(z, t)[0], 0.0);
    EXPECT_GE(focal_loss(z, t, 2.0, 0.25)[0], 0.0);
    const double d = dice_loss(z, t, 1.0)[0];
    EXPECT_GE(d, 0.0);
    EXPECT_LT(d, 1.0);
  }
}

TEST(Losses, GradCheckSuite) {
  for (const auto& r : run_gradcheck("supervision")) {
    SCOPED_TRACE(r.name);
    EXPECT_LT(r.error, 1e-6);
  }
}

TEST(Metrics, HandExample) {
  // TP=2, FP=1, FN=1
  const BinaryMask pred = mask_of(1, 5, {1, 1, 1, 0, 0});
  const BinaryMask gt = mask_of(1, 5, {1, 1, 0, 1, 0});
  EXPECT_DOUBLE_EQ(iou(pred, gt), 0.5);
  EXPECT_DOUBLE_EQ(f1(pred, gt), 2.0 / 3.0);
}

TEST(Metrics, Degenerate) {
  const BinaryMask a = mask_of(1, 4, {1, 1, 0, 0}), b = mask_of(1, 4, {0, 0, 1, 1});
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(f1(a, a), 1.0);
  EXPECT_EQ(iou(a, b), 0.0);
  EXPECT_EQ(f1(a, b), 0.0);
  EXPECT_EQ(iou(BinaryMask(3, 3), BinaryMask(3, 3)), 1.0);
  EXPECT_EQ(f1(BinaryMask(3, 3), BinaryMask(3, 3)), 1.0);
  EXPECT_THROW(iou(BinaryMask(3, 3), BinaryMask(3, 4)), DimensionError);
}

TEST(Metrics, F1IouIdentity) {
  SplitMix64 rng(4);
  for (int k = 0; k < 1000; ++k) {
    const BinaryMask p = random_mask(6, 7, rng.uniform(), rng), g = random_mask(6, 7, rng.uniform(), rng);
    const double j = iou(p, g);
    EXPECT_NEAR(f1(p, g), 2 * j / (1 + j), 1e-12);
  }
}

TEST(Metrics, ThresholdIsStrictlyPositiveLogit) {
  const BinaryMask m = threshold_logits(Td({1, 3, 1}, {-0.1, 0.0, 0.1}), 1, 3);
  EXPECT_EQ(m.bits, (std::vector<std::uint8_t>{0, 0, 1}));
}
