#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "duet/cli.hpp"

using namespace duet;
namespace fs = std::filesystem;

namespace {

const std::string kSource = DUET_SOURCE_DIR;
const std::string kData = kSource + "/data/sample/credit.csv";
const std::string kMeta = kSource + "/data/sample/credit.meta.json";
const std::string kFixture = kSource + "/tests/fixtures/credit_replay.jsonl";

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli_run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("duet_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Cli, HeuristicRunWritesOutputs) {
  auto dir = scratch("run");
  auto r = invoke({"run", "--data", kData, "--meta", kMeta, "--backend", "heuristic", "--out-dir", dir.string(),
                "--dump-stats", "--record", (dir / "copy.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (auto f : {"transformed.csv", "sequences.fts", "transcript.jsonl", "iterations.json", "timing.json", "stats.json",
                 "copy.jsonl"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_EQ(read_file((dir / "copy.jsonl").string()), read_file((dir / "transcript.jsonl").string()));
  auto loaded = load_csv_text(read_file((dir / "transformed.csv").string()),
                              meta_from_json(nlohmann::json::parse(read_file(kMeta))));
  EXPECT_GT(loaded.table.cols(), 5u);
  // every .fts line parses
  std::istringstream fts(read_file((dir / "sequences.fts").string()));
  for (std::string line; std::getline(fts, line);) EXPECT_NO_THROW(parse(line, OperatorSet::standard())) << line;
}

TEST(Cli, ParseRejectsWithCaret) {
  auto r = invoke({"parse", "--expr", "f1**f2"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("offset 3"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("^"), std::string::npos);
  auto ok = invoke({"parse", "--expr", "f2 * f1, log( f3 )"});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(ok.out, "f2*f1,log(f3)\n");
}

TEST(Cli, ReplayIsByteIdentical) {
  auto a = scratch("replay_a"), b = scratch("replay_b");
  for (const auto& d : {a, b}) {
    auto r = invoke({"run", "--data", kData, "--meta", kMeta, "--backend", "replay", "--record", kFixture, "--out-dir",
                  d.string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (auto f : {"transformed.csv", "sequences.fts"}) {
    EXPECT_EQ(read_file((a / f).string()), read_file((b / f).string())) << f;
  }
  EXPECT_EQ(read_file((a / "sequences.fts").string()),
            "f2/f1,f4*f5,log(f1),log(f2)\nf6+f5,f4/f3,sqrt(f7)\nf10*f4,tanh(f6)\n");
}

TEST(Cli, EvalWritesReport) {
  auto dir = scratch("eval");
  ASSERT_EQ(invoke({"run", "--data", kData, "--meta", kMeta, "--out-dir", dir.string()}).code, 0);
  auto report = (dir / "report.json").string();
  auto r = invoke({"eval", "--original", kData, "--transformed", (dir / "transformed.csv").string(), "--labels-from",
                kMeta, "--models", "dt,knn", "--seeds", "0,1", "--report", report});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(read_file(report));
  EXPECT_EQ(j["cells"].size(), 4u);
  for (const auto& c : j["cells"]) EXPECT_EQ(c["per_seed_accuracy"].size(), 2u);
}

TEST(Cli, UsageAndMissingFiles) {
  EXPECT_EQ(invoke({"run", "--meta", kMeta}).code, 1);
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
  EXPECT_EQ(invoke({"run", "--data", kData, "--meta", kMeta, "--backend", "nope"}).code, 1);
  EXPECT_EQ(invoke({"run", "--data", "/nonexistent.csv", "--meta", kMeta, "--out-dir", scratch("missing").string()}).code,
            2);
}

TEST(Cli, RemoteWithoutKeyFails) {
  ::unsetenv("DUET_API_KEY");
  auto r = invoke({"run", "--data", kData, "--meta", kMeta, "--backend", "remote", "--out-dir", scratch("remote").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("DUET_API_KEY"), std::string::npos) << r.err;
}

TEST(Cli, BinaryExitCodes) {
  std::string bin = DUET_CLI_PATH;
  EXPECT_EQ(std::system((bin + " parse --expr 'f1+f2' > /dev/null").c_str()), 0);
  int status = std::system((bin + " parse --expr 'f1**f2' > /dev/null 2>&1").c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 1);
}
