#include <gtest/gtest.h>

#include <cstdlib>

#include <json.hpp>

#include "fixtures.hpp"
#include "trajlens/cli.hpp"
#include "trajlens/common.hpp"
#include "trajlens/hashing.hpp"

using namespace trajlens;
using fixtures::run_tool;

namespace {

std::vector<std::string> quiet(std::vector<std::string> args) {
  args.insert(args.begin(), {"--log-level", "error"});
  return args;
}

fixtures::ToolRun small_synth(const fs::path& out, const std::string& seed = "1") {
  return run_tool(quiet({"--seed", seed, "synth", "--out", out.string(), "--batches", "4", "--groups", "1",
                         "--trajs", "2", "--increasing", "1", "--decreasing", "1", "--flat", "2", "--d-model", "8"}));
}

}  // namespace

TEST(Cli, UnknownFlagIsUsageError) {
  auto r = run_tool({"synth", "--no-such-flag"});
  EXPECT_EQ(r.code, kExitUsage);
  auto j = nlohmann::json::parse(r.err);
  EXPECT_TRUE(j.contains("error"));
  EXPECT_EQ(run_tool({}).code, kExitUsage);
}

TEST(Cli, VersionFlag) {
  auto r = run_tool({"--version"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find(tool_version()), std::string::npos);
}

TEST(Cli, LibraryErrorIsJsonWithExitOne) {
  fixtures::TempDir dir("cli_err");
  auto r = run_tool(quiet({"score", "--store", (dir / "missing").string(), "--out", dir.path().string()}));
  EXPECT_EQ(r.code, kExitFailure);
  auto j = nlohmann::json::parse(r.err);
  EXPECT_TRUE(j.contains("error"));
  EXPECT_NE(j.dump().find("missing"), std::string::npos);
}

TEST(Cli, ManifestIsStableAndTimestampFree) {
  fixtures::TempDir a("cli_manifest_a"), b("cli_manifest_b");
  ASSERT_EQ(small_synth(a.path()).code, 0);
  ASSERT_EQ(small_synth(b.path()).code, 0);
  auto ma = nlohmann::json::parse(read_file(a / "manifest_synth.json"));
  for (const char* key : {"tool", "version", "subcommand", "seed", "config_sha256", "outputs"})
    EXPECT_TRUE(ma.contains(key)) << key;
  for (const auto& [k, v] : ma.items()) {
    EXPECT_EQ(k.find("time"), std::string::npos);
    EXPECT_EQ(k.find("date"), std::string::npos);
  }
  const auto first = read_file(a / "manifest_synth.json");
  ASSERT_EQ(small_synth(a.path()).code, 0);
  EXPECT_EQ(read_file(a / "manifest_synth.json"), first);
  EXPECT_EQ(sha256_path(a / "corpus.jsonl"), sha256_path(b / "corpus.jsonl"));
  EXPECT_EQ(sha256_path(a / "activations"), sha256_path(b / "activations"));
  fixtures::TempDir c("cli_manifest_c");
  ASSERT_EQ(small_synth(c.path(), "2").code, 0);
  EXPECT_NE(sha256_path(a / "corpus.jsonl"), sha256_path(c / "corpus.jsonl"));
}

TEST(Cli, ConfigExpandsEnvironment) {
  fixtures::TempDir dir("cli_config");
  const auto out = dir / "from_config";
  ::setenv("TRAJLENS_TEST_OUT", out.c_str(), 1);
  write_file(dir / "run.toml",
             "seed = 3\nlog-level = \"error\"\n[synth]\nout = \"${TRAJLENS_TEST_OUT}\"\nbatches = 3\n"
             "groups = 1\ntrajs = 1\nflat = 1\nincreasing = 1\ndecreasing = 0\nd-model = 4\n");
  auto r = run_tool({"--config", (dir / "run.toml").string(), "synth"});
  ::unsetenv("TRAJLENS_TEST_OUT");
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::exists(out / "corpus.jsonl"));
  auto m = nlohmann::json::parse(read_file(out / "manifest_synth.json"));
  EXPECT_EQ(m.at("seed"), 3);
  auto corpus = load_corpus(out / "corpus.jsonl");
  EXPECT_EQ(corpus.size(), 3u);
}

TEST(Cli, PipelineAndReportRerun) {
  fixtures::TempDir dir("cli_pipeline");
  const auto d = dir.path().string();
  ASSERT_EQ(small_synth(dir.path()).code, 0);
  auto ex = run_tool(quiet({"extract", "--corpus", d + "/corpus.jsonl", "--weights", d + "/weights", "--activations",
                            d + "/activations", "--out", d + "/store", "--shards", "4"}));
  ASSERT_EQ(ex.code, 0) << ex.err;
  auto sc = run_tool(quiet({"score", "--store", d + "/store", "--out", d, "--top-k", "4"}));
  ASSERT_EQ(sc.code, 0) << sc.err;
  EXPECT_TRUE(fs::exists(dir / "scores.csv"));
  EXPECT_TRUE(fs::exists(dir / "ranking.json"));
  auto diff = run_tool(quiet({"score", "--store", d + "/store", "--out", d + "/diff", "--targets", "good_bad_diff"}));
  EXPECT_EQ(diff.code, kExitFailure);
  auto r1 = run_tool(quiet({"report", "--dir", d}));
  ASSERT_EQ(r1.code, 0) << r1.err;
  auto md = read_file(dir / "report.md");
  EXPECT_NE(md.find("## Top features"), std::string::npos);
  EXPECT_NE(md.find("section skipped"), std::string::npos);
  ASSERT_EQ(run_tool(quiet({"report", "--dir", d})).code, 0);
  EXPECT_EQ(read_file(dir / "report.md"), md);
}
