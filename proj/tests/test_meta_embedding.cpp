#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "oltr/meta_embedding.hpp"

using namespace oltr;

TEST(MetaEmbedding, ZeroHallucinatorIsUniform) {
  const Vec o = hallucinate(Vec::Ones(4), HallucinatorParams::zeros(5, 4));
  for (int k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(o(k), 0.2);
}

TEST(MetaEmbedding, ZeroSelectorIsZero) {
  EXPECT_EQ(concept_select(Vec::Ones(4), SelectorParams::zeros(4, 4)), Vec::Zero(4));
}

TEST(MetaEmbedding, ComposeMatchesLoopSum) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat c = random_matrix(7, 5, 2.0, rng);
    const Vec o = random_vector(7, 1.0, rng);
    Vec expected = Vec::Zero(5);
    for (int i = 0; i < 7; ++i)
      for (int d = 0; d < 5; ++d) expected(d) += o(i) * c(i, d);
    EXPECT_LE((compose_memory_feature(o, c) - expected).lpNorm<Eigen::Infinity>(), 1e-12);
  }
}

TEST(MetaEmbedding, ComposeRejectsCountMismatch) {
  EXPECT_THROW(compose_memory_feature(Vec::Ones(3), Mat::Zero(4, 2)), ShapeError);
}

TEST(MetaEmbedding, ReachabilityExamples) {
  Mat c(2, 2);
  c << 0.0, 0.0, 10.0, 0.0;
  Vec v(2);
  v << 1.0, 0.0;
  EXPECT_DOUBLE_EQ(reachability(v, c, 1e-12), 1.0);
  EXPECT_DOUBLE_EQ(reachability(c.row(1).transpose(), c, 1e-12), 1e-12);
}

TEST(MetaEmbedding, ReachabilityMatchesLoopMin) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat c = random_matrix(9, 4, 1.0, rng);
    const Vec v = random_vector(4, 1.0, rng);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 9; ++i) {
      double s = 0.0;
      for (int d = 0; d < 4; ++d) s += (v(d) - c(i, d)) * (v(d) - c(i, d));
      best = std::min(best, std::sqrt(s));
    }
    EXPECT_EQ(reachability(v, c, 1e-12), std::max(best, 1e-12));
  }
}

TEST(MetaEmbedding, ReachabilityRejectsEmptyMemory) {
  EXPECT_THROW(reachability(Vec::Zero(2), Mat(0, 2), 1e-12), std::invalid_argument);
}

TEST(MetaEmbedding, NormStrictlyDecreasesInGamma) {
  // centroid placed along the feature, so gamma grows with the offset while the numerator stays fixed
  const MetaEmbeddingOptions opt{false, false, true};
  Vec v(2);
  v << 1.0, 0.5;
  double previous = std::numeric_limits<double>::infinity();
  for (double offset : {0.1, 0.5, 1.0, 2.0, 8.0}) {
    Mat c(1, 2);
    c.row(0) = (v * (1.0 + offset)).transpose();
    const MetaEmbedding m = meta_embed(v, c, HallucinatorParams::zeros(1, 2), SelectorParams::zeros(2, 2), opt);
    const double n = m.vector.norm();
    EXPECT_LT(n, previous);
    previous = n;
  }
}

TEST(MetaEmbedding, AssemblyMatchesDefinition) {
  std::mt19937_64 rng(23);
  const Mat c = random_matrix(5, 3, 1.0, rng);
  const auto hal = HallucinatorParams::random(5, 3, rng);
  const auto sel = SelectorParams::random(3, 3, rng);
  const Vec v = random_vector(3, 1.0, rng);
  const MetaEmbedding m = meta_embed(v, c, hal, sel);
  const Vec expected =
      (v + (concept_select(v, sel).array() * compose_memory_feature(hallucinate(v, hal), c).array()).matrix()) /
      reachability(v, c, 1e-12);
  EXPECT_LE((m.vector - expected).norm(), 1e-12);
}

TEST(MetaEmbedding, AblationsReduceToDirectFeature) {
  std::mt19937_64 rng(24);
  const Mat c = random_matrix(5, 3, 1.0, rng);
  const Vec v = random_vector(3, 1.0, rng);
  MetaEmbeddingOptions opt;
  opt.memory_feature = false;
  opt.calibration = false;
  const MetaEmbedding m =
      meta_embed(v, c, HallucinatorParams::random(5, 3, rng), SelectorParams::random(3, 3, rng), opt);
  EXPECT_EQ(m.vector, v);
  EXPECT_EQ(m.scale, 1.0);
}
