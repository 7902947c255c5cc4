#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "ekd/cli.hpp"
#include "test_support.hpp"

using namespace ekd;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

/// Small, fast run settings shared by the pipeline tests.
std::vector<std::string> small_run(const fs::path &root, const std::string &name) {
  return {"--run-root", root.string(), "--run-name", name, "--per-class", "40",
          "--test-per-class", "20", "--teacher-epochs", "3", "--epochs", "3",
          "--teacher-hidden", "16", "--student-hidden", "8"};
}

std::vector<std::string> with(std::string cmd, std::vector<std::string> extra) {
  extra.insert(extra.begin(), std::move(cmd));
  return extra;
}

const std::vector<std::string> kRunFiles = {
    "config.txt",       "train.ekds",          "test.ekds",
    "data.meta",        "teacher.ekdm",        "teacher_logits.ekdl",
    "energy_manifest.csv", "student.ekdm",     "metrics.jsonl",
    "bucket_confidence.csv", "correlation_disparity.csv"};

} // namespace

TEST(RunConfig, DefaultsAndOverrides) {
  RunConfig c;
  EXPECT_EQ(c.num("base_t"), 4.0);
  EXPECT_EQ(c.integer("t_minus"), -2);
  EXPECT_EQ(c.num("r"), 0.2);
  EXPECT_TRUE(c.flag("t_squared_scaling"));
  c.merge_text("# comment\nr = 0.3  # trailing\n\npolicy=gradation\n");
  EXPECT_EQ(c.num("r"), 0.3);
  EXPECT_EQ(c.policy().mode, PolicyMode::gradation);
  EXPECT_THROW(c.set("nonsense", "1"), Error);
  EXPECT_THROW(c.merge_text("just words\n"), Error);
}

TEST(RunConfig, EchoRoundTrips) {
  RunConfig c;
  c.set("seed", "9");
  c.set("heda", "mixup");
  RunConfig d;
  d.merge_text(c.echo());
  EXPECT_EQ(d.values(), c.values());
  EXPECT_EQ(d.echo(), c.echo());
}

TEST(RunConfig, ValidationErrors) {
  auto bad = [](std::string key, std::string value) {
    RunConfig c;
    c.set(key, value);
    EXPECT_THROW(c.validate(), Error) << key << "=" << value;
  };
  bad("r", "0.6");
  bad("r", "0");
  bad("t_e", "0");
  bad("alpha", "1.5");
  bad("policy", "cosine");
  bad("t_plus", "-1");
  bad("t_plus", "1.5");
  bad("heda", "cutout");
  bad("data_kind", "mnist");
  bad("epochs", "abc");
  bad("run_name", "../escape");
}

TEST(Cli, GenDataRequiresKind) {
  const auto r = run_cli({"gen-data", "--out", "/tmp/x"});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("--kind"), std::string::npos);
}

TEST(Cli, UnknownFlagAndBadValue) {
  EXPECT_EQ(run_cli({"pipeline", "--no-such-flag", "1"}).code, cli::kConfigError);
  const auto r = run_cli({"pipeline", "--policy", "cosine"});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("cosine"), std::string::npos);
  EXPECT_EQ(run_cli({"pipeline", "--r", "0.7"}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({}).code, cli::kConfigError);
}

TEST(Cli, GenDataWritesSplits) {
  const auto dir = test::scratch_dir("gen");
  const auto r = run_cli({"gen-data", "--kind", "longtail", "--out", dir.string(), "--classes",
                          "3", "--per-class", "20", "--imbalance", "0.5", "--dim", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto train = load_dataset(dir / "train.ekds");
  EXPECT_EQ(train.class_counts(), (std::vector<std::size_t>{20, 14, 10}));
  EXPECT_TRUE(fs::exists(dir / "test.ekds"));
  EXPECT_TRUE(fs::exists(dir / "data.meta"));
}

TEST(Cli, PipelineWritesLayoutAndRerunsBitIdentically) {
  const auto root = test::scratch_dir("cli_pipeline");
  auto args = with("pipeline", small_run(root, "a"));
  args.insert(args.end(), {"--heda", "cutmix"});
  const auto r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto dir = root / "a";
  for (const auto &f : kRunFiles)
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_TRUE(fs::exists(dir / "heda.ekds"));
  EXPECT_TRUE(fs::exists(dir / "heda_provenance.csv"));
  EXPECT_FALSE(fs::exists(dir / "FAILED"));

  // Rerun from the echoed config into another root.
  const auto root2 = test::scratch_dir("cli_pipeline_rerun");
  const auto r2 = run_cli({"pipeline", "--config", (dir / "config.txt").string(), "--run-root",
                           root2.string()});
  ASSERT_EQ(r2.code, 0) << r2.err;
  for (const auto &f : kRunFiles)
    EXPECT_EQ(io::read_file(dir / f), io::read_file(root2 / "a" / f)) << f;
  EXPECT_EQ(io::read_file(dir / "heda.ekds"), io::read_file(root2 / "a" / "heda.ekds"));
}

TEST(Cli, StagesMatchPipeline) {
  const auto root = test::scratch_dir("cli_stages");
  ASSERT_EQ(run_cli(with("pipeline", small_run(root, "full"))).code, 0);
  const auto stage_dir = root / "staged";
  const auto data = run_cli({"gen-data", "--kind", "blobs", "--out", stage_dir.string(),
                             "--per-class", "40", "--test-per-class", "20"});
  ASSERT_EQ(data.code, 0) << data.err;
  for (const char *stage : {"pretrain", "score", "partition", "distill", "eval"}) {
    auto args = with(stage, small_run(root, "staged"));
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << stage << ": " << r.err;
  }
  for (const char *f : {"train.ekds", "teacher.ekdm", "teacher_logits.ekdl",
                        "energy_manifest.csv", "student.ekdm", "correlation_disparity.csv"})
    EXPECT_EQ(io::read_file(root / "full" / f), io::read_file(stage_dir / f)) << f;
}

TEST(Cli, StageFailureLeavesMarker) {
  const auto root = test::scratch_dir("cli_fail");
  auto args = with("pipeline", small_run(root, "broken"));
  args.insert(args.end(), {"--train-data", (root / "missing.ekds").string(), "--test-data",
                           (root / "missing.ekds").string()});
  const auto r = run_cli(args);
  EXPECT_EQ(r.code, cli::kRuntimeError);
  const auto marker = io::read_text(root / "broken" / "FAILED");
  EXPECT_EQ(marker.rfind("data:", 0), 0u) << marker;
  EXPECT_NE(r.err.find("data"), std::string::npos);
}

TEST(Cli, RunRootFromEnvironment) {
  const auto root = test::scratch_dir("cli_env");
  ::setenv("EKD_RUN_ROOT", root.c_str(), 1);
  const auto r = run_cli({"pipeline", "--run-name", "env", "--per-class", "30",
                          "--test-per-class", "10", "--teacher-epochs", "1", "--epochs", "1"});
  ::unsetenv("EKD_RUN_ROOT");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "env" / "student.ekdm"));
}

TEST(Cli, PoliciesRun) {
  const auto root = test::scratch_dir("cli_policies");
  for (const char *policy : {"constant", "energy", "gradation"}) {
    auto args = with("pipeline", small_run(root, policy));
    args.insert(args.end(), {"--policy", policy});
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << policy << ": " << r.err;
    const auto m = load_manifest(root / policy / "energy_manifest.csv");
    EXPECT_EQ(m.policy.rfind(policy, 0), 0u);
  }
}

TEST(Cli, SweepWritesSummary) {
  const auto root = test::scratch_dir("cli_sweep");
  auto args = with("sweep-r", small_run(root, "sw"));
  args.insert(args.end(), {"--r-values", "0.2,0.4", "--seeds", "2", "--jobs", "2"});
  const auto r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = io::read_text(root / "sw" / "sweep_summary.csv");
  const auto lines = text::lines(csv);
  ASSERT_GE(lines.size(), 4u);
  EXPECT_EQ(lines[1].rfind("baseline,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("r=0.2,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("r=0.4,", 0), 0u);
  EXPECT_NE(r.out.find("baseline"), std::string::npos);
  EXPECT_TRUE(fs::exists(root / "sw" / "r=0.4_seed2" / "student.ekdm"));
}
