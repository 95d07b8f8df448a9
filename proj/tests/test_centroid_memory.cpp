#include <gtest/gtest.h>

#include <random>

#include "oltr/centroid_memory.hpp"
#include "oltr/tensor.hpp"

using namespace oltr;

TEST(CentroidMemory, InitIsPerClassMean) {
  const std::vector<Vec> f = {Vec::Constant(2, 1.0), Vec::Constant(2, 3.0), Vec::Constant(2, -1.0)};
  const CentroidMemory m = init_centroids(f, {0, 0, 1}, 2);
  EXPECT_EQ(m.centroid(0), Vec::Constant(2, 2.0));
  EXPECT_EQ(m.centroid(1), Vec::Constant(2, -1.0));
  EXPECT_EQ(m.version, 0);
}

TEST(CentroidMemory, InitRejectsEmptyClass) {
  EXPECT_THROW(init_centroids({Vec::Zero(2)}, {0}, 2), std::invalid_argument);
}

TEST(CentroidMemory, MomentumUpdateExample) {
  CentroidMemory m{Mat(1, 2), 0};
  m.centroids << 1.0, 1.0;
  Vec a(2), b(2);
  a << 3.0, 1.0;
  b << 1.0, -1.0;  // batch mean (2, 0)
  const CentroidMemory out = update_centroids({a, b}, {0, 0}, m, 0.9);
  EXPECT_NEAR(out.centroids(0, 0), 1.1, 1e-12);
  EXPECT_NEAR(out.centroids(0, 1), 0.9, 1e-12);
  EXPECT_EQ(out.version, 1);
}

TEST(CentroidMemory, AbsentClassesAreUntouched) {
  CentroidMemory m{Mat::Ones(3, 2), 4};
  const CentroidMemory out = update_centroids({Vec::Zero(2)}, {1}, m, 0.5);
  EXPECT_EQ(out.centroid(0), Vec::Ones(2));
  EXPECT_EQ(out.centroid(2), Vec::Ones(2));
  EXPECT_EQ(out.centroid(1), Vec::Constant(2, 0.5));
}

TEST(CentroidMemory, UpdateRejectsOutOfRangeLabel) {
  CentroidMemory m{Mat::Ones(2, 2), 0};
  EXPECT_THROW(update_centroids({Vec::Zero(2)}, {2}, m, 0.9), std::out_of_range);
}

TEST(LargeMarginLoss, CoincidentCentroidsGiveMargin) {
  Mat c(2, 2);
  c << 1.0, 2.0, 1.0, 2.0;
  const Vec v = c.row(0).transpose();
  EXPECT_DOUBLE_EQ(large_margin_loss(v, 0, c, 5.0).value, 5.0);
}

TEST(LargeMarginLoss, SingleCentroidThrows) {
  EXPECT_THROW(large_margin_loss(Vec::Zero(2), 0, Mat::Zero(1, 2), 5.0), std::invalid_argument);
}

TEST(LargeMarginLoss, InactiveWhenWellSeparated) {
  Mat c(2, 1);
  c << 0.0, 100.0;
  const auto r = large_margin_loss(Vec::Zero(1), 0, c, 5.0);
  EXPECT_FALSE(r.active);
  EXPECT_EQ(r.value, 0.0);
}

TEST(LargeMarginLoss, NearestNegativeMatchesLoopOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat c = random_matrix(6, 3, 1.0, rng);
    const Vec v = random_vector(3, 1.0, rng);
    const int y = trial % 6;
    double nearest = 1e300;
    for (int i = 0; i < 6; ++i)
      if (i != y) nearest = std::min(nearest, (v - c.row(i).transpose()).norm());
    const double expected = std::max(0.0, (v - c.row(y).transpose()).norm() - nearest + 0.5);
    EXPECT_NEAR(large_margin_loss(v, y, c, 0.5).value, expected, 1e-12);
  }
}

TEST(LargeMarginLoss, SumFormAddsEveryNegative) {
  Mat c(3, 1);
  c << 0.0, 1.0, 3.0;
  // |0-0| - (1 + 3) + 10
  EXPECT_DOUBLE_EQ(large_margin_loss(Vec::Zero(1), 0, c, 10.0, MarginForm::SumOfNegatives).value, 6.0);
}
