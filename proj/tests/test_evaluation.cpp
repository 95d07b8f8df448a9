#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oltr/evaluation.hpp"

using namespace oltr;

namespace {

Vec probs(std::initializer_list<double> v) {
  Vec p(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) p(i++) = x;
  return p;
}

ScoredSplit split_from(const std::vector<Vec>& p, const std::vector<int>& labels, const std::vector<int>& source) {
  ScoredSplit s;
  s.probabilities = p;
  s.labels = labels;
  s.source_classes = source;
  s.gammas.assign(p.size(), 1.0);
  s.squashed_norms.assign(p.size(), 0.5);
  return s;
}

ScoredTest random_scored(std::mt19937_64& rng, int k, int closed, int open, int open_classes) {
  ScoredTest t;
  std::uniform_int_distribution<int> label(0, k - 1);
  auto draw = [&] { return softmax(random_vector(k, 2.0, rng)); };
  std::vector<Vec> cp, op;
  std::vector<int> cl, cs, ol, os;
  for (int i = 0; i < closed; ++i) {
    cp.push_back(draw());
    cl.push_back(label(rng));
    cs.push_back(cl.back());
  }
  for (int i = 0; i < open; ++i) {
    op.push_back(draw());
    ol.push_back(kOpenLabel);
    os.push_back(k + i % open_classes);
  }
  t.closed = split_from(cp, cl, cs);
  t.open = split_from(op, ol, os);
  return t;
}

}  // namespace

TEST(PredictOpen, Examples) {
  EXPECT_EQ(predict_open(Vec::Constant(20, 0.05), 0.1), kOpenLabel);
  EXPECT_EQ(predict_open(probs({0.4, 0.35, 0.25}), 0.1), 0);
  EXPECT_EQ(predict_open(Vec::Constant(20, 0.05), 0.0), 0);
}

TEST(PredictOpen, ThresholdZeroNeverRejects) {
  std::mt19937_64 rng(51);
  for (int i = 0; i < 200; ++i) EXPECT_NE(predict_open(softmax(random_vector(30, 0.01, rng)), 0.0), kOpenLabel);
}

TEST(PredictOpen, RejectsNonDistributions) {
  EXPECT_THROW(predict_open(Vec(), 0.1), std::invalid_argument);
  EXPECT_THROW(predict_open(probs({0.7, 0.7}), 0.1), std::invalid_argument);
  EXPECT_THROW(predict_open(probs({1.2, -0.2}), 0.1), std::invalid_argument);
}

TEST(FMeasure, WorkedExample) {
  EXPECT_NEAR(f_measure(OpenSetCounts{8, 2, 2}), 0.8, 1e-15);
  EXPECT_EQ(f_measure(OpenSetCounts{0, 0, 0}), 0.0);
}

TEST(FMeasure, MatchesBruteForceCounter) {
  std::mt19937_64 rng(52);
  std::uniform_int_distribution<int> pred(-1, 4);
  std::bernoulli_distribution open(0.3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> p, y;
    std::vector<bool> is_open;
    for (int i = 0; i < 50; ++i) {
      const bool o = open(rng);
      is_open.push_back(o);
      y.push_back(o ? kOpenLabel : static_cast<int>(rng() % 5));
      p.push_back(pred(rng));
    }
    int tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < 50; ++i) {
      if (is_open[i] && p[i] != -1) ++fn;
      if (!is_open[i] && p[i] == y[i]) ++tp;
      if (!is_open[i] && p[i] != y[i]) ++fp;
    }
    const double prec = tp + fp ? double(tp) / (tp + fp) : 0.0;
    const double rec = tp + fn ? double(tp) / (tp + fn) : 0.0;
    const double expected = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    EXPECT_EQ(f_measure(p, y, is_open), expected);
  }
}

TEST(AccuracyByShot, GroupsByPartition) {
  const std::vector<ShotCategory> part = {ShotCategory::Many, ShotCategory::Medium, ShotCategory::Few};
  const auto r = accuracy_by_shot({0, 1, 0, 2, 2}, {0, 1, 1, 2, 2}, part);
  EXPECT_EQ(*r.many.accuracy, 1.0);
  EXPECT_EQ(*r.medium.accuracy, 0.5);
  EXPECT_EQ(*r.few.accuracy, 1.0);
  EXPECT_EQ(r.overall, 0.8);
}

TEST(AccuracyByShot, EmptySubsetHasNoValue) {
  const std::vector<ShotCategory> part = {ShotCategory::Many, ShotCategory::Many};
  const auto r = accuracy_by_shot({0, 1}, {0, 1}, part);
  EXPECT_FALSE(r.few.accuracy.has_value());
  EXPECT_FALSE(r.medium.accuracy.has_value());
}

TEST(Sweeps, ThresholdZeroEqualsClosedProtocolOnMixedSet) {
  std::mt19937_64 rng(53);
  const ScoredTest t = random_scored(rng, 5, 40, 20, 2);
  const auto curve = threshold_sweep(t, {0.0});
  int correct = 0;
  for (std::size_t i = 0; i < t.closed.labels.size(); ++i)
    correct += predict_open(t.closed.probabilities[i], 0.0) == t.closed.labels[i];
  // open samples are never rejected at threshold 0, so none of them count as correct
  EXPECT_DOUBLE_EQ(curve[0].second, static_cast<double>(correct) / 60.0);
}

TEST(Sweeps, AcceptedCountIsMonotoneInThreshold) {
  std::mt19937_64 rng(54);
  const ScoredTest t = random_scored(rng, 6, 60, 30, 3);
  int previous = 1 << 30;
  for (double th : default_threshold_grid()) {
    const int n = accepted_count(mixed_predictions(t.closed, t.open, th));
    EXPECT_LE(n, previous);
    previous = n;
  }
}

TEST(Sweeps, NoOpenClassesMeansNoFalseNegatives) {
  std::mt19937_64 rng(55);
  const ScoredTest t = random_scored(rng, 4, 30, 20, 4);
  const auto m = mixed_predictions(t.closed, first_open_classes(t.open, 0), 0.1);
  EXPECT_EQ(open_set_counts(m.predictions, m.labels, m.is_open).false_negative, 0);
  const auto curve = open_class_sweep(t, {0, 1, 2, 4}, 0.1);
  EXPECT_EQ(curve.size(), 4u);
}

TEST(Sweeps, FirstOpenClassesKeepsRequestedClasses) {
  std::mt19937_64 rng(56);
  const ScoredTest t = random_scored(rng, 4, 0, 12, 3);
  std::set<int> classes;
  for (int c : first_open_classes(t.open, 2).source_classes) classes.insert(c);
  EXPECT_EQ(classes.size(), 2u);
  EXPECT_EQ(first_open_classes(t.open, 3).labels.size(), 12u);
}

TEST(Sweeps, EmptyGridThrows) {
  std::mt19937_64 rng(57);
  const ScoredTest t = random_scored(rng, 3, 5, 5, 1);
  EXPECT_THROW(threshold_sweep(t, {}), std::invalid_argument);
  EXPECT_FALSE(parse_sweep_axis("bogus").has_value());
  EXPECT_EQ(parse_sweep_axis("threshold"), SweepAxis::Threshold);
}
