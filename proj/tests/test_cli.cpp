#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "tcsm/config.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(TCSM_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[512];
  while (fgets(buf, sizeof buf, p)) r.output += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("tcsm_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kSmall = R"({"vocab": {"size": 3, "mask_id": 2}, "path": {"source": "mask"},
  "model": {"length": 2, "time_bins": 1},
  "run": {"steps": 200, "eval_every": 100, "sample_count": 100, "sampler": "ancestral"}})";

}  // namespace

TEST(Cli, OracleCheckWritesReport) {
  const auto d = scratch("oracle");
  const auto cfg = write(d / "c.json", R"({"vocab": {"size": 3}})");
  const auto r = run("oracle-check --config " + cfg + " --out " + (d / "run").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto report = slurp(d / "run" / "oracle_report.txt");
  for (const char* name : {"posterior_normalization", "score_decomposition", "softmax_conditional",
                           "velocity_rate_conditions", "gkl_score_equals_kl_plus_is"})
    EXPECT_NE(report.find(name), std::string::npos) << name;
  EXPECT_EQ(report.find("FAIL"), std::string::npos);
}

TEST(Cli, SameSeedGivesIdenticalMetrics) {
  const auto d = scratch("determinism");
  const auto cfg = write(d / "c.json", kSmall);
  ASSERT_EQ(run("pretrain --config " + cfg + " --seed 7 --out " + (d / "a").string()).code, 0);
  ASSERT_EQ(run("pretrain --config " + cfg + " --seed 7 --out " + (d / "b").string()).code, 0);
  ASSERT_EQ(run("pretrain --config " + cfg + " --seed 8 --out " + (d / "c").string()).code, 0);
  EXPECT_EQ(slurp(d / "a" / "metrics.csv"), slurp(d / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(d / "a" / "samples" / "step_200.txt"), slurp(d / "b" / "samples" / "step_200.txt"));
  EXPECT_NE(slurp(d / "a" / "metrics.csv"), slurp(d / "c" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(d / "a" / "checkpoints" / "step_200.json"));
  EXPECT_TRUE(fs::exists(d / "a" / "model.json"));
}

TEST(Cli, MissingMaskIdIsAConfigError) {
  const auto d = scratch("mask");
  const auto cfg = write(d / "c.json", R"({"vocab": {"size": 3}, "path": {"source": "mask"}})");
  const auto r = run("pretrain --config " + cfg + " --out " + (d / "run").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("vocab.mask_id"), std::string::npos) << r.output;
}

TEST(Cli, UnknownKeysAreRejected) {
  const auto d = scratch("unknown");
  const auto cfg = write(d / "c.json", R"({"vocab": {"size": 3}, "optimizer": {"learning_rate": 0.1}})");
  const auto r = run("pretrain --config " + cfg + " --out " + (d / "run").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("optimizer.learning_rate"), std::string::npos) << r.output;
  const auto cfg2 = write(d / "c2.json", R"({"vocab": {"size": 3}, "extras": {}})");
  EXPECT_EQ(run("pretrain --config " + cfg2 + " --out " + (d / "run").string()).code, 2);
  EXPECT_EQ(run("pretrain --out " + (d / "run").string()).code, 2);  // --config is required
}

TEST(Cli, ResolvedConfigMaterializesDefaults) {
  const auto d = scratch("resolved");
  const auto cfg = write(d / "c.json", kSmall);
  ASSERT_EQ(run("pretrain --config " + cfg + " --seed 3 --workers 1 --out " + (d / "run").string()).code, 0);
  const auto j = nlohmann::json::parse(slurp(d / "run" / "config.json"));
  EXPECT_EQ(j["run"]["seed"], 3);
  EXPECT_EQ(j["optimizer"]["lr"], 1e-2);
  EXPECT_EQ(j["loss"]["family"], "cross_entropy");
  EXPECT_EQ(j["task"]["beta"], 1.0);
  // The snapshot parses back to the same resolved document.
  EXPECT_EQ(tcsm::parse_config(j).resolved, j);
}

TEST(Cli, NumericalAbortExitsThree) {
  const auto d = scratch("abort");
  // Every clean sequence gets -1e5, so all importance weights underflow.
  const auto table = write(d / "reward.json", R"([{"tokens":[0,0],"reward":-1e5},{"tokens":[0,1],"reward":-1e5},
    {"tokens":[1,0],"reward":-1e5},{"tokens":[1,1],"reward":-1e5}])");
  auto j = nlohmann::json::parse(kSmall);
  j["run"]["steps"] = 5;
  j["task"] = {{"data", "random"}, {"pretrained", "oracle"}, {"reward", table}};
  const auto cfg = write(d / "c.json", j.dump());
  const auto r = run("posttrain-reward --config " + cfg + " --out " + (d / "run").string());
  EXPECT_EQ(r.code, 3) << r.output;
}

TEST(Cli, PosttrainRequiresPretrainedModel) {
  const auto d = scratch("pretrained");
  const auto cfg = write(d / "c.json", kSmall);
  const auto r = run("posttrain-dpo --config " + cfg + " --out " + (d / "run").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("task.pretrained"), std::string::npos) << r.output;
}

TEST(Cli, PretrainThenSampleAndEval) {
  const auto d = scratch("chain");
  const auto cfg = write(d / "c.json", kSmall);
  ASSERT_EQ(run("pretrain --config " + cfg + " --out " + (d / "pre").string()).code, 0);
  auto j = nlohmann::json::parse(kSmall);
  j["task"]["checkpoint"] = (d / "pre" / "model.json").string();
  const auto cfg2 = write(d / "c2.json", j.dump());
  ASSERT_EQ(run("sample --config " + cfg2 + " --out " + (d / "s").string()).code, 0);
  EXPECT_EQ(tcsm::read_samples((d / "s" / "samples.txt").string()).size(), 100u);
  ASSERT_EQ(run("eval --config " + cfg2 + " --out " + (d / "e").string()).code, 0);
  const auto rows = tcsm::read_metric_rows((d / "e" / "eval.csv").string());
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0].name, "posterior_kl");
}
