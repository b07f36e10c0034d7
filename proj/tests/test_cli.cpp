#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>

#include "prosparse/config.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using prosparse::json;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

// Runs the CLI with `args`, capturing stdout and stderr together.
Result cli(const std::string& args) {
  std::string cmd = std::string(PROSPARSE_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json corpus(const std::string& name) {
  return json{{"trees", "data/" + name + "/trees.txt"},
              {"ids", "data/" + name + "/ids.txt"},
              {"alignments", "data/" + name + "/alignments.tsv"},
              {"frames_dir", "data/" + name + "/frames"}};
}

json tiny_config(bool prosody) {
  return json{{"data", {{"train", corpus("train")}, {"dev", corpus("dev")}, {"test", corpus("ambiguous")}}},
              {"model",
               {{"prosody", {{"enabled", prosody}}},
                {"encoder", {{"layers", 1}, {"heads", 2}, {"d_content", 8}, {"d_position", 4}, {"d_prosody", 4},
                             {"d_ff", 8}, {"dropout", 0.0}}},
                {"cnn", {{"widths", {3, 5}}, {"filters_per_width", 2}}},
                {"embedding", {{"mode", "learned"}, {"dim", 6}, {"min_count", 1}}},
                {"label_hidden", 8}}},
              {"train", {{"seeds", {1, 2}}, {"batch_size", 4}, {"max_epochs", 2}, {"warmup_steps", 2},
                         {"learning_rate", 0.005}}},
              {"output_dir", "runs"},
              {"cache_dir", "cache"}};
}

// Synthetic corpora plus text-only and prosody configs, shared by every test.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testutil::temp_dir("cli");
    auto r = cli("synth --out " + dir_ + "/data --sentences 12 --dev-sentences 4 --ambiguous-pairs 3 --vector-dim 4");
    ASSERT_EQ(r.code, 0) << r.output;
    testutil::write_file(dir_ + "/text.json", tiny_config(false).dump(2));
    testutil::write_file(dir_ + "/prosody.json", tiny_config(true).dump(2));
  }

  static std::string path(const std::string& rel) { return dir_ + "/" + rel; }

  // Trains `config` into `run` and returns the run directory.
  static std::string train(const std::string& config, const std::string& run, const std::string& extra = "") {
    auto r = cli("--config " + path(config) + " train --run-dir " + path(run) + " " + extra);
    EXPECT_EQ(r.code, 0) << r.output;
    return path(run);
  }

  static std::string dir_;
};

std::string Cli::dir_;

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli("--help").code, 0);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("evaluate --gold").code, 2);
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  auto r = cli("--config " + path("missing.json") + " train");
  EXPECT_EQ(r.code, 2) << r.output;
  r = cli("--config " + path("text.json") + " --set train.epochz=3 train");
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("epochz"), std::string::npos) << r.output;
  r = cli("train");
  EXPECT_EQ(r.code, 2) << r.output;
}

TEST_F(Cli, DataErrorsExitThree) {
  auto gold = path("data/dev/trees.txt");
  testutil::write_file(path("short.txt"), "(S (NN x))\n");
  auto r = cli("evaluate --gold " + gold + " --pred " + path("short.txt"));
  EXPECT_EQ(r.code, 3) << r.output;
  testutil::write_file(path("broken.txt"), "(S (NN x)\n");
  r = cli("evaluate --gold " + path("broken.txt") + " --pred " + path("broken.txt"));
  EXPECT_EQ(r.code, 3) << r.output;
}

TEST_F(Cli, TrainTwiceGivesIdenticalLogs) {
  auto a = train("text.json", "runs/det-a"), b = train("text.json", "runs/det-b");
  for (int seed : {1, 2}) {
    auto m = "/seed-" + std::to_string(seed) + "/metrics.tsv";
    auto la = testutil::read_file(a + m);
    EXPECT_FALSE(la.empty());
    EXPECT_EQ(la, testutil::read_file(b + m)) << m;
  }
  auto sa = json::parse(testutil::read_file(a + "/summary.json"));
  auto sb = json::parse(testutil::read_file(b + "/summary.json"));
  EXPECT_EQ(sa["median_seed"], sb["median_seed"]);
  EXPECT_EQ(sa["runs"].size(), 2u);
  EXPECT_TRUE(fs::exists(a + "/test.pred.txt"));
}

TEST_F(Cli, SeedFlagRunsOneSeed) {
  auto run = train("text.json", "runs/one", "--seed 9");
  auto s = json::parse(testutil::read_file(run + "/summary.json"));
  ASSERT_EQ(s["runs"].size(), 1u);
  EXPECT_EQ(s["median_seed"], 9);
}

TEST_F(Cli, DivergenceExitsFour) {
  auto r = cli("--config " + path("text.json") + " --set train.learning_rate=1e35 train --run-dir " + path("runs/nan"));
  EXPECT_EQ(r.code, 4) << r.output;
}

TEST_F(Cli, ParseTextOnlyNeedsNoProsody) {
  auto run = train("text.json", "runs/parse-text", "--seed 1");
  testutil::write_file(path("plain.txt"), "i think so\nyes\n");
  auto r = cli("parse --checkpoint " + run + "/seed-1/best.ckpt --input " + path("plain.txt") + " --output " +
               path("plain.pred.txt"));
  ASSERT_EQ(r.code, 0) << r.output;
  auto trees = prosparse::read_tree_file(path("plain.pred.txt"));
  ASSERT_EQ(trees.size(), 2u);
  EXPECT_EQ(trees[0].words(), (std::vector<std::string>{"i", "think", "so"}));
  EXPECT_EQ(trees[1].words(), std::vector<std::string>{"yes"});
}

TEST_F(Cli, ParseProsodyCheckpointWithoutFramesFails) {
  auto run = train("prosody.json", "runs/parse-prosody", "--seed 1");
  auto ckpt = run + "/seed-1/best.ckpt";
  auto d = path("data/dev");
  auto r = cli("parse --checkpoint " + ckpt + " --input " + d + "/trees.txt --input-trees --ids " + d + "/ids.txt");
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("prosody"), std::string::npos) << r.output;
  r = cli("parse --checkpoint " + ckpt + " --input " + d + "/trees.txt --input-trees --ids " + d +
          "/ids.txt --alignments " + d + "/alignments.tsv --frames-dir " + d + "/frames --output " +
          path("dev.pred.txt"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(prosparse::read_tree_file(path("dev.pred.txt")).size(), prosparse::read_tree_file(d + "/trees.txt").size());
}

TEST_F(Cli, EvaluateWritesReports) {
  auto gold = path("data/dev/trees.txt");
  auto r = cli("evaluate --gold " + gold + " --pred " + gold + " --out " + path("eval/self"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("100.00"), std::string::npos) << r.output;
  for (auto ext : {".tsv", ".txt", ".json"}) EXPECT_TRUE(fs::exists(path("eval/self") + ext)) << ext;
  auto j = json::parse(testutil::read_file(path("eval/self.json")));
  EXPECT_FALSE(j.empty());
}

TEST_F(Cli, SignificanceOfIdenticalPredictionsIsHalf) {
  auto gold = path("data/dev/trees.txt");
  auto r = cli("--seed 3 significance --gold " + gold + " --pred-a " + gold + " --pred-b " + gold +
               " --resamples 2000 --out " + path("sig.json"));
  ASSERT_EQ(r.code, 0) << r.output;
  auto j = json::parse(testutil::read_file(path("sig.json")));
  EXPECT_DOUBLE_EQ(j["p_value"].get<double>(), 0.5);
  EXPECT_EQ(j["n_resamples"], 2000);
}

TEST_F(Cli, ReportComparesRuns) {
  auto text = train("text.json", "runs/report-text", "--seed 1");
  auto pros = train("prosody.json", "runs/report-prosody", "--seed 1");
  auto r = cli("report " + text + " " + pros + " --name text --name prosody --resamples 1000 --out " +
               path("report/table"));
  ASSERT_EQ(r.code, 0) << r.output;
  auto table = testutil::read_file(path("report/table.txt"));
  EXPECT_NE(table.find("text"), std::string::npos) << table;
  EXPECT_NE(table.find("prosody"), std::string::npos) << table;
  EXPECT_TRUE(fs::exists(path("report/table.tsv")));
}

TEST_F(Cli, FeaturesCommandWritesFiles) {
  auto r = cli("--config " + path("prosody.json") + " features");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(path("runs/features/train.features.txt"))) << r.output;
}
