#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "oltr/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Captured {
  int code = 0;
  std::string out, err;
};

Captured run(std::vector<std::string> args) {
  args.insert(args.begin(), "oltr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Captured c;
  c.code = oltr::cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  c.out = out.str();
  c.err = err.str();
  return c;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("oltr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    setenv(oltr::cli::kRunRootEnv, root_.c_str(), 1);
  }
  void TearDown() override {
    unsetenv(oltr::cli::kRunRootEnv);
    fs::remove_all(root_);
  }

  static std::vector<std::string> small(std::vector<std::string> args) {
    for (const char* a : {"--k", "5", "--num-open-classes", "2", "--n-max", "40", "--n-min", "4", "--input-dim", "8",
                          "--embed-dim", "6", "--hidden-dim", "10", "--batch-size", "16", "--classes-per-batch",
                          "4", "--test-per-class", "8", "--open-per-class", "8", "--val-per-class", "6"})
      args.emplace_back(a);
    return args;
  }

  fs::path root_;
};

}  // namespace

TEST_F(Cli, CurateWritesManifests) {
  const auto r = run({"curate", "--run", "r", "--source", "synthetic", "--k", "20", "--alpha", "6", "--n-max", "500",
                      "--n-min", "5", "--seed", "1"});
  EXPECT_EQ(r.code, 0) << r.err;
  for (const char* s : {"train", "val", "test_closed", "test_open"})
    EXPECT_TRUE(fs::exists(root_ / "r" / "manifests" / (std::string(s) + ".txt"))) << s;
  EXPECT_TRUE(fs::exists(root_ / "r" / "config.txt"));
}

TEST_F(Cli, EvalWithoutCheckpointFails) {
  ASSERT_EQ(run(small({"curate", "--run", "r"})).code, 0);
  const auto r = run({"eval", "--run", "r"});
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(r.code, oltr::cli::kMissing);
  EXPECT_NE(r.err.find("missing checkpoint"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingRunIsReported) {
  EXPECT_EQ(run({"train", "--run", "nowhere"}).code, oltr::cli::kMissing);
}

TEST_F(Cli, InvalidConfigExitsWithConfigCode) {
  const auto r = run({"curate", "--run", "r", "--lambda-lm", "-1"});
  EXPECT_EQ(r.code, oltr::cli::kConfig);
  EXPECT_NE(r.err.find("lambda_lm"), std::string::npos) << r.err;
}

TEST_F(Cli, SnapshotIsImmutable) {
  ASSERT_EQ(run(small({"curate", "--run", "r", "--epochs", "1"})).code, 0);
  const auto r = run({"train", "--run", "r", "--epochs", "3"});
  EXPECT_EQ(r.code, oltr::cli::kConfig);
  EXPECT_NE(r.err.find("epochs"), std::string::npos) << r.err;
}

TEST_F(Cli, TrainThenEvalWritesReports) {
  ASSERT_EQ(run(small({"curate", "--run", "r", "--epochs", "2"})).code, 0);
  ASSERT_EQ(run({"train", "--run", "r"}).code, 0);
  EXPECT_TRUE(fs::exists(root_ / "r" / "checkpoints" / "last.ckpt"));
  EXPECT_TRUE(fs::exists(root_ / "r" / "checkpoints" / "best.ckpt"));
  const auto r = run({"eval", "--run", "r"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(oltr::cli::read_text(root_ / "r" / "reports" / "eval.json"));
  EXPECT_TRUE(report.contains("f_measure"));
  EXPECT_TRUE(fs::exists(root_ / "r" / "reports" / "threshold_curve.csv"));
  EXPECT_TRUE(fs::exists(root_ / "r" / "reports" / "open_class_curve.csv"));
}

TEST_F(Cli, AblateProducesSixRows) {
  ASSERT_EQ(run(small({"curate", "--run", "r", "--epochs", "1"})).code, 0);
  const auto r = run({"ablate", "--run", "r"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = nlohmann::json::parse(oltr::cli::read_text(root_ / "r" / "reports" / "ablation.json"));
  ASSERT_EQ(table.size(), 6u);
  std::vector<std::string> names;
  for (const auto& row : table) names.push_back(row["variant"]);
  EXPECT_EQ(names, (std::vector<std::string>{"full", "plain", "no_memory_feature", "no_concept_selector",
                                             "no_calibration", "no_attention"}));
}

TEST_F(Cli, UnknownSubcommandAndAxis) {
  EXPECT_EQ(run({"frobnicate"}).code, oltr::cli::kUsage);
  ASSERT_EQ(run(small({"curate", "--run", "r", "--epochs", "1"})).code, 0);
  EXPECT_EQ(run({"sweep", "--run", "r", "--axis", "bogus"}).code, oltr::cli::kUsage);
}

TEST_F(Cli, DumpEmbeddingsWritesOneRowPerSample) {
  ASSERT_EQ(run(small({"curate", "--run", "r", "--epochs", "1"})).code, 0);
  ASSERT_EQ(run({"train", "--run", "r"}).code, 0);
  const fs::path out = root_ / "emb.csv";
  ASSERT_EQ(run({"dump-embeddings", "--run", "r", "--split", "test_open", "--out", out.string()}).code, 0);
  std::istringstream lines(oltr::cli::read_text(out));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) ++n;
  EXPECT_EQ(n, 1 + 2 * 8);
}

TEST_F(Cli, GradcheckSubcommandPasses) {
  const auto r = run({"gradcheck", "--component", "cross_entropy", "--seeds", "3"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
}
