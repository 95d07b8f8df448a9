#include <gtest/gtest.h>

#include <random>

#include "oltr/attention.hpp"

using namespace oltr;

namespace {

FeatureMap random_map(int c, int h, int w, std::mt19937_64& rng) {
  return {random_matrix(c, h * w, 1.0, rng), h, w};
}

}  // namespace

TEST(Attention, PreservesShape) {
  std::mt19937_64 rng(1);
  const FeatureMap f = random_map(8, 4, 4, rng);
  const AttentionParams p = AttentionParams::random(8, rng);
  const FeatureMap out = modulated_attention(f, p);
  EXPECT_EQ(out.values.rows(), 8);
  EXPECT_EQ(out.values.cols(), 16);
  EXPECT_EQ(out.height, 4);
  EXPECT_EQ(out.width, 4);
}

TEST(Attention, IdenticalPositionsGiveIdenticalOutputs) {
  std::mt19937_64 rng(2);
  const Vec column = random_vector(8, 1.0, rng);
  FeatureMap f(column.replicate(1, 9), 3, 3);
  const AttentionParams p = AttentionParams::random(8, rng);
  const FeatureMap out = modulated_attention(f, p);
  for (int j = 1; j < 9; ++j) EXPECT_LT((out.values.col(j) - out.values.col(0)).norm(), 1e-12);
}

TEST(Attention, GateSumsToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const FeatureMap f = random_map(6, 3, 5, rng);
    const AttentionParams p = AttentionParams::random(6, rng);
    const Vec g = spatial_gate(f, p);
    EXPECT_NEAR(g.sum(), 1.0, 1e-12);
    EXPECT_TRUE((g.array() > 0.0).all());
  }
}

TEST(Attention, ResidualIsGatedSelfAttention) {
  std::mt19937_64 rng(4);
  const FeatureMap f = random_map(8, 4, 4, rng);
  const AttentionParams p = AttentionParams::random(8, rng);
  ModulatedAttentionCache cache;
  const FeatureMap out = modulated_attention(f, p, &cache);
  const FeatureMap sa = self_attention(f, p);
  const Vec gate = spatial_gate(f, p);
  for (int c = 0; c < 8; ++c)
    for (int n = 0; n < 16; ++n)
      EXPECT_NEAR(out.values(c, n) - f.values(c, n), gate(n) * sa.values(c, n), 1e-12);
}

TEST(Attention, ZeroGateLeavesInputUnchanged) {
  std::mt19937_64 rng(5);
  const FeatureMap f = random_map(4, 2, 2, rng);
  const FeatureMap sa = random_map(4, 2, 2, rng);
  const FeatureMap out = apply_gate(f, sa, Vec::Zero(4));
  EXPECT_EQ(out.values, f.values);
}

TEST(Attention, SelfAttentionWeightsAreRowStochastic) {
  std::mt19937_64 rng(6);
  const FeatureMap f = random_map(4, 3, 3, rng);
  SelfAttentionCache c;
  self_attention(f, AttentionParams::random(4, rng), &c);
  for (Eigen::Index i = 0; i < c.weights.rows(); ++i) EXPECT_NEAR(c.weights.row(i).sum(), 1.0, 1e-12);
}

TEST(Attention, ChannelMismatchThrows) {
  std::mt19937_64 rng(7);
  const FeatureMap f = random_map(4, 2, 2, rng);
  EXPECT_THROW(modulated_attention(f, AttentionParams::random(6, rng)), ShapeError);
  EXPECT_THROW(FeatureMap(Mat::Zero(4, 5), 2, 2), ShapeError);
}
