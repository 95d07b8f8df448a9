#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <filesystem>
#include <set>

#include "oltr/data.hpp"

using namespace oltr;

namespace {

Config small_config() {
  Config c;
  c.num_classes = 6;
  c.num_open_classes = 2;
  c.n_max = 40;
  c.n_min = 3;
  c.val_per_class = 4;
  c.test_per_class = 5;
  c.open_per_class = 5;
  c.input_dim = 4;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Pareto, LargeScaleProfile) {
  const auto n = pareto_counts(1000, 6.0, 1280, 5);
  ASSERT_EQ(n.size(), 1000u);
  EXPECT_EQ(n.front(), 1280);
  EXPECT_EQ(n.back(), 5);
  for (std::size_t i = 1; i < n.size(); ++i) EXPECT_LE(n[i], n[i - 1]);
  const auto part = shot_partition(n, 100, 20);
  std::set<ShotCategory> seen(part.begin(), part.end());
  EXPECT_EQ(seen.size(), 3u);
}

TEST(Pareto, DegenerateInputs) {
  EXPECT_EQ(pareto_counts(1, 6.0, 50, 5), std::vector<int>{50});
  EXPECT_EQ(pareto_counts(3, 6.0, 7, 7), std::vector<int>(3, 7));
  EXPECT_THROW(pareto_counts(0, 6.0, 50, 5), std::invalid_argument);
  EXPECT_THROW(pareto_counts(5, 0.0, 50, 5), std::invalid_argument);
  EXPECT_THROW(pareto_counts(5, 6.0, 5, 50), std::invalid_argument);
}

TEST(ShotCategory, BoundaryRules) {
  EXPECT_EQ(shot_category(100, 100, 20), ShotCategory::Medium);
  EXPECT_EQ(shot_category(20, 100, 20), ShotCategory::Medium);
  EXPECT_EQ(shot_category(5, 100, 20), ShotCategory::Few);
  EXPECT_EQ(shot_category(1280, 100, 20), ShotCategory::Many);
  EXPECT_EQ(shot_category(101, 100, 20), ShotCategory::Many);
  EXPECT_EQ(shot_category(19, 100, 20), ShotCategory::Few);
}

TEST(Curation, SplitsAreDisjointAndSized) {
  const Config c = small_config();
  const Source src = load_source(c);
  const CuratedDataset ds = curate(src, c);
  EXPECT_EQ(ds.class_counts, pareto_counts(6, c.pareto_alpha, 40, 3));
  EXPECT_EQ(ds.val.size(), 6u * 4);
  EXPECT_EQ(ds.test_closed.size(), 6u * 5);
  EXPECT_EQ(ds.test_open.size(), 2u * 5);
  std::set<std::int64_t> ids;
  std::size_t total = 0;
  for (const auto* part : {&ds.train, &ds.val, &ds.test_closed, &ds.test_open})
    for (const auto& e : *part) {
      ids.insert(e.id);
      ++total;
    }
  EXPECT_EQ(ids.size(), total);
  for (const auto& e : ds.test_open) {
    EXPECT_TRUE(e.is_open());
    EXPECT_GE(e.source_class, 6);
  }
  for (const auto& e : ds.train) EXPECT_LT(e.label, 6);
}

TEST(Curation, DeterministicInSeed) {
  const Config c = small_config();
  const CuratedDataset a = curate(load_source(c), c);
  const CuratedDataset b = curate(load_source(c), c);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].id, b.train[i].id);
    EXPECT_EQ(a.train[i].input, b.train[i].input);
  }
}

TEST(Curation, ManifestsRoundTrip) {
  const Config c = small_config();
  const Source src = load_source(c);
  const CuratedDataset ds = curate(src, c);
  const auto dir = std::filesystem::temp_directory_path() / "oltr_test_manifests";
  std::filesystem::remove_all(dir);
  write_manifests(dir, ds, c);
  const CuratedDataset back = load_manifests(dir, src, c);
  EXPECT_EQ(back.class_counts, ds.class_counts);
  EXPECT_EQ(back.closed_classes, ds.closed_classes);
  EXPECT_EQ(back.open_classes, ds.open_classes);
  ASSERT_EQ(back.test_open.size(), ds.test_open.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) EXPECT_EQ(back.train[i].id, ds.train[i].id);
  std::filesystem::remove_all(dir);
}

TEST(Sampler, ClassFrequenciesAreUniform) {
  std::vector<int> labels;
  const std::vector<int> sizes = {200, 50, 10, 3, 1, 1, 30, 8};
  for (std::size_t k = 0; k < sizes.size(); ++k) labels.insert(labels.end(), sizes[k], static_cast<int>(k));
  ClassAwareSampler sampler(labels, 12, 4, 7);
  std::vector<double> hits(sizes.size(), 0.0);
  const int batches = 10000;
  for (int b = 0; b < batches; ++b) {
    const auto batch = sampler.next();
    ASSERT_EQ(batch.size(), 12u);
    std::set<int> classes;
    for (auto i : batch) classes.insert(labels[i]);
    ASSERT_EQ(classes.size(), 4u);
    for (int k : classes) hits[k] += 1.0;
  }
  const double expected = batches * 4.0 / sizes.size();
  double stat = 0.0;
  for (double h : hits) stat += (h - expected) * (h - expected) / expected;
  const boost::math::chi_squared dist(static_cast<double>(sizes.size() - 1));
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, stat)), 0.01);
}

TEST(Sampler, NoReplacementWhenQuotaFits) {
  std::vector<int> labels(30, 0);
  labels.insert(labels.end(), 30, 1);
  ClassAwareSampler sampler(labels, 20, 2, 1);
  for (int b = 0; b < 50; ++b) {
    const auto batch = sampler.next();
    EXPECT_EQ(std::set<std::size_t>(batch.begin(), batch.end()).size(), batch.size());
  }
}

TEST(Sampler, RejectsBadGeometry) {
  const std::vector<int> labels = {0, 1, 2};
  EXPECT_THROW(ClassAwareSampler(labels, 10, 4, 0), std::invalid_argument);
  EXPECT_THROW(ClassAwareSampler(labels, 8, 4, 0), std::invalid_argument);
}

TEST(Sampler, InstanceBatchesCoverEveryIndexOnce) {
  std::mt19937_64 rng(5);
  const auto batches = instance_batches(103, 10, rng);
  EXPECT_EQ(batches.size(), 11u);
  std::set<std::size_t> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 103u);
}
