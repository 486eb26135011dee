#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "mixucb/cli.hpp"
#include "support.hpp"

using namespace mixucb;
using testing_support::read_text;
using testing_support::ScratchDir;
using testing_support::write_text;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

const char* kTwoPoint = R"({
  "arms": [
    {"kind": "gaussian-mixture", "means": [[0, 0]], "sd": 0},
    {"kind": "gaussian-mixture", "means": [[10, 0]], "sd": 0}
  ],
  "loss": {"metric": "rke", "kernel": {"kind": "gaussian", "bandwidth": 1.0}},
  "policies": [{"kind": "mixture-ucb-cab"}, {"kind": "one-arm-oracle", "arm": 2}],
  "run": {"T": 40, "seeds": 2, "oracle_budget": 100, "output_dir": "results"}
})";

}  // namespace

TEST(Cli, ValidateConfigWritesNothing) {
    ScratchDir dir("cli_validate");
    write_text(dir / "exp.json", kTwoPoint);
    const auto r = cli({"validate-config", "--config", (dir / "exp.json").string(), "--out", (dir / "out").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_FALSE(std::filesystem::exists(dir / "out"));
    EXPECT_FALSE(std::filesystem::exists("results"));
}

TEST(Cli, OraclePrintsMixtureAndModeCount) {
    ScratchDir dir("cli_oracle");
    write_text(dir / "exp.json", kTwoPoint);
    const auto r = cli({"oracle", "--config", (dir / "exp.json").string(), "--quiet"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("alpha: 0.5 0.5\n"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("mode_count: 2\n"), std::string::npos) << r.out;
}

TEST(Cli, MissingEmbeddingFileIsAConfigError) {
    ScratchDir dir("cli_missing");
    auto doc = json::parse(kTwoPoint);
    doc["arms"][1] = json{{"kind", "file-pool"}, {"path", "embeddings/missing.csv"}};
    write_text(dir / "exp.json", doc.dump());
    const auto r = cli({"run", "--config", (dir / "exp.json").string(), "--out", (dir / "out").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("missing.csv"), std::string::npos) << r.err;
}

TEST(Cli, BadOverridesFailBeforeRunning) {
    ScratchDir dir("cli_override");
    write_text(dir / "exp.json", kTwoPoint);
    const auto cfg = (dir / "exp.json").string();
    const auto out = (dir / "out").string();
    EXPECT_EQ(cli({"run", "--config", cfg, "--out", out, "--set", "run.horizon=5"}).code, 1);
    EXPECT_EQ(cli({"run", "--config", cfg, "--out", out, "--set", "policies.0.beta=0.5"}).code, 1);
    EXPECT_EQ(cli({"run", "--config", cfg, "--out", out, "--set", "run.T=1"}).code, 1);
    EXPECT_FALSE(std::filesystem::exists(dir / "out"));
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(cli({}).code, 1);
    EXPECT_EQ(cli({"frobnicate"}).code, 1);
    EXPECT_EQ(cli({"run"}).code, 1);
    EXPECT_EQ(cli({"run", "--config", "/nonexistent/exp.json"}).code, 1);
    EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, RunExportsAndIsReproducible) {
    ScratchDir dir("cli_run");
    write_text(dir / "exp.json", kTwoPoint);
    const auto cfg = (dir / "exp.json").string();
    const auto a = cli({"run", "--config", cfg, "--out", (dir / "a").string(), "--quiet"});
    const auto b = cli({"run", "--config", cfg, "--out", (dir / "b").string(), "--jobs", "3"});
    ASSERT_EQ(a.code, 0) << a.err;
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_TRUE(a.err.empty());
    EXPECT_FALSE(b.err.empty());
    EXPECT_EQ(a.out, b.out);
    const auto name = "trajectories/p1_mixture-ucb-cab_seed2.csv";
    EXPECT_EQ(read_text(dir / "a" / name), read_text(dir / "b" / name));
    EXPECT_EQ(read_text(dir / "a" / "manifest.json"), read_text(dir / "b" / "manifest.json"));
    EXPECT_NE(a.out.find("policy,runs,mean_final_loss"), std::string::npos);
}

TEST(Cli, OutputDirectoryPrecedence) {
    ScratchDir dir("cli_env");
    write_text(dir / "exp.json", kTwoPoint);
    const auto cfg = (dir / "exp.json").string();
    ::setenv(kOutDirEnv, (dir / "from_env").string().c_str(), 1);
    EXPECT_EQ(cli({"run", "--config", cfg, "--quiet", "--set", "run.seeds=1"}).code, 0);
    EXPECT_TRUE(std::filesystem::exists(dir / "from_env" / "manifest.json"));
    EXPECT_EQ(cli({"run", "--config", cfg, "--quiet", "--set", "run.seeds=1", "--out", (dir / "flag").string()}).code, 0);
    EXPECT_TRUE(std::filesystem::exists(dir / "flag" / "manifest.json"));
    ::unsetenv(kOutDirEnv);
}

TEST(Cli, CompareAndCheckBound) {
    ScratchDir dir("cli_compare");
    auto doc = json::parse(kTwoPoint);
    doc["check"] = {{"replications", 1000}, {"counts", {10, 10}}, {"lemma_counts", {1, 5}}, {"horizons", {100}}};
    write_text(dir / "exp.json", doc.dump());
    const auto cfg = (dir / "exp.json").string();
    const auto cmp = cli({"compare", "--config", cfg, "--quiet"});
    ASSERT_EQ(cmp.code, 0) << cmp.err;
    EXPECT_EQ(std::count(cmp.out.begin(), cmp.out.end(), '\n'), 3);
    const auto chk = cli({"check-bound", "--config", cfg, "--quiet"});
    ASSERT_EQ(chk.code, 0) << chk.err;
    EXPECT_NE(chk.out.find("delta,radius,rate_upper,rate_lower,holds"), std::string::npos);
    EXPECT_NE(chk.out.find("T,seed,regret,bound,holds"), std::string::npos);
    EXPECT_EQ(chk.out.find(",no\n"), std::string::npos) << chk.out;
}
