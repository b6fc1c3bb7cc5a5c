#include <gtest/gtest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "helpers.hpp"

namespace {

using json = nlohmann::json;
using testing_support::TempDir;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out;
  std::ostringstream err;
  Result r;
  r.code = kerl::cli::run(args, in, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// A toy data directory and a tiny config, plus checkpoints trained once.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    kerl::Config cfg = kerl::toy::tiny_config();
    cfg.epochs_pretrain = 2;
    cfg.epochs_rec = 3;
    cfg.epochs_gen = 2;
    testing_support::write_file(path("tiny.conf"), "# generated for tests\n" + cfg.canonical());
    make_toy_ = run({"make-toy", "--corpus", "gen", "--out", path("data")});
    kge_ = run({"train-kge", "--data-dir", path("data"), "--config", path("tiny.conf"), "--out", path("kge.ckpt"),
                "--log", path("kge.log")});
    rec_ = run({"train-rec", "--data-dir", path("data"), "--checkpoint", path("kge.ckpt"), "--out", path("rec.ckpt")});
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string path(const std::string& name) { return (*dir_ / name).string(); }

  static TempDir* dir_;
  static Result make_toy_, kge_, rec_;
};

TempDir* CliPipeline::dir_ = nullptr;
Result CliPipeline::make_toy_;
Result CliPipeline::kge_;
Result CliPipeline::rec_;

TEST_F(CliPipeline, TrainingStagesChainThroughCheckpoints) {
  ASSERT_EQ(make_toy_.code, 0) << make_toy_.err;
  EXPECT_EQ(json::parse(make_toy_.out).at("entities"), 20);
  ASSERT_EQ(kge_.code, 0) << kge_.err;
  EXPECT_EQ(json::parse(kge_.out).at("stage"), "pretrained");
  ASSERT_EQ(rec_.code, 0) << rec_.err;
  EXPECT_EQ(json::parse(rec_.out).at("stage"), "rec_converged");

  // One JSON object per training step.
  std::istringstream log(testing_support::read_file(path("kge.log")));
  std::string line;
  std::size_t steps = 0;
  while (std::getline(log, line)) {
    EXPECT_EQ(json::parse(line).at("stage"), "pretrain");
    ++steps;
  }
  EXPECT_EQ(steps, json::parse(kge_.out).at("steps").get<std::size_t>());
}

TEST_F(CliPipeline, EvalRecPrintsRecallJson) {
  const auto r = run({"eval-rec", "--data-dir", path("data"), "--checkpoint", path("rec.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  for (const char* k : {"recall@1", "recall@10", "recall@50"}) {
    EXPECT_GE(j.at(k).get<double>(), 0.0);
    EXPECT_LE(j.at(k).get<double>(), 1.0);
  }
  EXPECT_LE(j.at("recall@1").get<double>(), j.at("recall@10").get<double>());
  EXPECT_GT(j.at("n_examples").get<int>(), 0);
}

TEST_F(CliPipeline, GenerationStageNeedsRecommenderCheckpoint) {
  const auto bad = run({"train-gen", "--data-dir", path("data"), "--checkpoint", path("kge.ckpt"), "--out",
                        path("gen_bad.ckpt")});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("rec_converged"), std::string::npos) << bad.err;

  const auto gen = run({"train-gen", "--data-dir", path("data"), "--checkpoint", path("rec.ckpt"), "--out",
                        path("gen.ckpt")});
  ASSERT_EQ(gen.code, 0) << gen.err;
  const auto eval = run({"eval-gen", "--data-dir", path("data"), "--checkpoint", path("gen.ckpt"), "--samples", "2"});
  ASSERT_EQ(eval.code, 0) << eval.err;
  const json j = json::parse(eval.out);
  EXPECT_EQ(j.at("samples").size(), 2u);
  EXPECT_GE(j.at("dist2").get<double>(), 0.0);

  const auto early = run({"eval-gen", "--data-dir", path("data"), "--checkpoint", path("rec.ckpt")});
  EXPECT_EQ(early.code, 1);
}

TEST_F(CliPipeline, CorruptCheckpointIsADataError) {
  std::string bytes = testing_support::read_file(path("rec.ckpt"));
  bytes[bytes.size() - 2] = static_cast<char>(bytes[bytes.size() - 2] ^ 0x55);
  testing_support::write_file(path("corrupt.ckpt"), bytes);
  const auto r = run({"eval-rec", "--data-dir", path("data"), "--checkpoint", path("corrupt.ckpt")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("checkpoint manifest mismatch"), std::string::npos) << r.err;
}

TEST_F(CliPipeline, ServeExitsWhenTheCheckpointFailsToLoad) {
  std::string bytes = testing_support::read_file(path("rec.ckpt"));
  bytes[bytes.size() - 1] = static_cast<char>(bytes[bytes.size() - 1] ^ 0x11);
  testing_support::write_file(path("corrupt_serve.ckpt"), bytes);
  const auto r = run({"serve", "--data-dir", path("data"), "--checkpoint", path("corrupt_serve.ckpt"), "--host",
                      "127.0.0.1", "--port", "0"});
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_NE(r.out.find("listening on 127.0.0.1:"), std::string::npos);
}

TEST_F(CliPipeline, StructuralOverrideOnCheckpointIsRefused) {
  const auto r = run({"eval-rec", "--data-dir", path("data"), "--checkpoint", path("rec.ckpt"), "--set", "d_0=7"});
  EXPECT_EQ(r.code, 1);
  const auto ok = run({"eval-rec", "--data-dir", path("data"), "--checkpoint", path("rec.ckpt"), "--set", "top_k=3"});
  EXPECT_EQ(ok.code, 0) << ok.err;
}

TEST_F(CliPipeline, ChatReadsTurnsFromStdin) {
  const auto r = run({"chat", "--data-dir", path("data"), "--checkpoint", path("rec.ckpt")},
                     "I like @3\n\n/reset\nwhat about @99\n/quit\nnever read\n");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("You might like: "), std::string::npos);
  EXPECT_NE(r.out.find("  1. picture"), std::string::npos);
  EXPECT_NE(r.out.find("(new session)"), std::string::npos);
  EXPECT_NE(r.out.find("dangling reference to id 99"), std::string::npos);
}

TEST_F(CliPipeline, MissingDataIsADataError) {
  const auto r = run({"eval-rec", "--data-dir", path("nowhere"), "--checkpoint", path("rec.ckpt")});
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST(Cli, UnknownSubcommandIsAUsageError) {
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("unknown subcommand 'frobnicate'"), std::string::npos);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"train-rec"}).code, 1);
}

TEST(Cli, HelpExitsCleanly) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("train-kge"), std::string::npos);
}

TEST(Cli, GradCheckReportsEachLoss) {
  const auto r = run({"grad-check", "--loss", "rec"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j.at("loss"), "rec");
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_LT(j.at("max_rel_error").get<double>(), 1e-4);
}

TEST(Cli, ImpossibleToleranceIsANumericFailure) {
  const auto r = run({"grad-check", "--loss", "ke", "--tolerance", "1e-300"});
  EXPECT_EQ(r.code, 3);
}

}  // namespace
