// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "worldcache/drift.hpp"

using namespace worldcache;

namespace {

LatentTensor random_tensor(const TensorShape& s, unsigned seed, double offset = 0.0) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> n(offset, 1.0);
  LatentTensor x(s);
  for (double& v : x.data()) v = n(gen);
  return x;
}

const TensorShape kShape{1, 2, 6, 5, 4};

}  // namespace

TEST(ProbeDrift, IdenticalInputsGiveZero) {
  const auto x = random_tensor(kShape, 1);
  EXPECT_EQ(probe_drift(x, x), 0.0);
}

TEST(ProbeDrift, MatchesHandComputedRatio) {
  const TensorShape s{1, 1, 1, 2, 1};
  const LatentTensor prev(s, std::vector<double>{2.0, -2.0});
  const LatentTensor curr(s, std::vector<double>{2.5, -1.0});
  // |0.5| + |1.0| over |2| + |-2|
  EXPECT_NEAR(probe_drift(curr, prev), 1.5 / (4.0 + kDefaultEps), 1e-15);
}

TEST(ProbeDrift, ScaleInvariantAndZeroPrevFinite) {
  const auto a = random_tensor(kShape, 2);
  const auto b = random_tensor(kShape, 3);
  EXPECT_NEAR(probe_drift(scaled(a, 3.0), scaled(b, 3.0), 0.0), probe_drift(a, b, 0.0), 1e-12);
  // The stabiliser only perturbs the ratio by about eps / |prev|.
  EXPECT_NEAR(probe_drift(a, b), probe_drift(a, b, 0.0), 2.0 * kDefaultEps * probe_drift(a, b, 0.0) / l1_norm(b));
  const LatentTensor zero(kShape);
  EXPECT_TRUE(std::isfinite(probe_drift(a, zero)));
}

TEST(MotionVelocity, RelativeL1OfRawInputs) {
  const auto a = random_tensor(kShape, 4);
  const auto b = random_tensor(kShape, 5);
  EXPECT_DOUBLE_EQ(motion_velocity(a, b), l1_norm(subtract(a, b)) / (l1_norm(b) + kDefaultEps));
  EXPECT_EQ(motion_velocity(a, a), 0.0);
}

TEST(Saliency, ConstantAcrossChannelsGivesZeroMap) {
  LatentTensor x(kShape);
  for (std::size_t h = 0; h < kShape.height; ++h)
    for (std::size_t w = 0; w < kShape.width; ++w)
      for (std::size_t d = 0; d < kShape.channels; ++d) x.at(0, 0, h, w, d) = x.at(0, 1, h, w, d) = double(h + w);
  const SaliencyMap s = saliency_map(x, 4);
  EXPECT_EQ(s.source_step, 4);
  for (double v : s.values.values) EXPECT_EQ(v, 0.0);
}

TEST(Saliency, NormalisedToUnitRange) {
  const SaliencyMap s = saliency_map(random_tensor(kShape, 6));
  double lo = 1e9, hi = -1e9;
  for (double v : s.values.values) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
}

TEST(SwdDrift, ZeroSaliencyWeightIsMeanPerLocationL1) {
  const auto a = random_tensor(kShape, 7);
  const auto b = random_tensor(kShape, 8);
  const SaliencyMap s = saliency_map(a);
  const double swd = swd_drift(a, b, s, 0.0);
  EXPECT_NEAR(swd, l1_norm(subtract(a, b)) / static_cast<double>(kShape.spatial()), 1e-12);
  EXPECT_NEAR(swd_relative(swd, b), probe_drift(a, b), 1e-12);
}

TEST(SwdDrift, WeightingOnlyIncreasesDriftAndIsBounded) {
  const auto a = random_tensor(kShape, 9);
  const auto b = random_tensor(kShape, 10);
  const SaliencyMap s = saliency_map(a);
  const double base = swd_drift(a, b, s, 0.0);
  const double beta = 0.12;
  const double weighted = swd_drift(a, b, s, beta);
  EXPECT_GE(weighted, base);
  EXPECT_LE(weighted, (1.0 + beta) * base + 1e-12);
}

TEST(SwdDrift, WeightsConcentrateOnSalientLocation) {
  // Change confined to the single salient location: weight (1 + beta).
  const TensorShape s{1, 1, 2, 2, 2};
  LatentTensor prev(s);
  prev.at(0, 0, 0, 0, 0) = 1.0;
  prev.at(0, 0, 0, 0, 1) = -1.0;  // high channel variance at (0, 0)
  LatentTensor curr = prev;
  curr.at(0, 0, 0, 0, 0) += 0.4;
  const SaliencyMap sal = saliency_map(prev);
  EXPECT_DOUBLE_EQ(sal.values(0, 0), 1.0);
  EXPECT_NEAR(swd_drift(curr, prev, sal, 0.5), 0.4 * 1.5 / 4.0, 1e-15);
}

TEST(SwdDrift, SaliencyShapeMismatchThrows) {
  const auto a = random_tensor(kShape, 11);
  const SaliencyMap wrong = saliency_map(random_tensor({1, 1, 3, 3, 2}, 12));
  EXPECT_THROW(swd_drift(a, a, wrong, 0.1), ShapeError);
}
