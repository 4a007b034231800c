#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "cli.hpp"
#include "json.hpp"

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "pyrhead");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = pyrhead::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "pyrhead_cli_test";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST(Cli, HelpAndUsageExitCodes) {
  EXPECT_EQ(run({"--help"}).code, 0);
  const Outcome h = run({"attend", "--help"});
  EXPECT_EQ(h.code, 0);
  EXPECT_NE(h.out.find("config schema version 1"), std::string::npos);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"gridgen"}).code, 2);
  EXPECT_EQ(run({"gridgen", "--box", "0,0,0,1,1,1,0", "--bogus"}).code, 2);
  EXPECT_EQ(run({"gridgen", "--box", "0,0,0,1,1"}).code, 2);
  EXPECT_EQ(run({"attend", "--op", "nonsense"}).code, 2);
  EXPECT_EQ(run({"gridgen", "--box", "0,0,0,1,1,1,0", "--format", "xml"}).code, 2);
}

TEST(Cli, MalformedConfigReportsPosition) {
  const std::string path = scratch("bad.json");
  std::ofstream(path) << "{\n{\n";
  const Outcome r = run({"gridgen", "--box", "0,0,0,1,1,1,0", "--config", path});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(path + ":2:1:"), std::string::npos) << r.err;
}

TEST(Cli, GridgenCube) {
  const Outcome r = run({"gridgen", "--box", "0,0,0,2,2,2,0", "--grid", "2,2,2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["count"], 8);
  ASSERT_EQ(j["levels"].size(), 1u);
  for (const auto& p : j["levels"][0]) {
    for (const auto& v : p) EXPECT_TRUE(v == 0.5 || v == 1.5);
  }
  const Outcome pyramid = run({"gridgen", "--box", "0,0,0,2,2,2,0"});
  EXPECT_EQ(nlohmann::json::parse(pyramid.out)["count"], 409);
  const Outcome csv = run({"gridgen", "--box", "0,0,0,2,2,2,0", "--grid", "2,2,2", "--format", "csv"});
  EXPECT_EQ(csv.out.substr(0, csv.out.find('\n')), "level,x,y,z");
}

TEST(Cli, UnifiedWithGraphGatesEqualsGraph) {
  const Outcome a = run({"attend", "--op", "unified", "--gates", "1,0,0,0", "--seed", "3"});
  const Outcome b = run({"attend", "--op", "graph", "--seed", "3"});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(nlohmann::json::parse(a.out)["f_grid"], nlohmann::json::parse(b.out)["f_grid"]);
}

TEST(Cli, StatsEmptyAndSmall) {
  const Outcome e = run({"stats", "--scenes", "0"});
  EXPECT_EQ(e.code, 0);
  EXPECT_EQ(e.out, "bucket,interior,gathered\n");
  const Outcome s = run({"stats", "--scenes", "2", "--format", "json"});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_EQ(nlohmann::json::parse(s.out).size(), 5u);
}

TEST(Cli, TrainToyDeterministicAcrossThreads) {
  const std::vector<std::string> base{"train-toy", "--steps", "3", "--batch", "2", "--train-scenes", "2",
                                      "--eval-scenes", "1", "--seed", "4"};
  auto with = [&](const char* threads) {
    auto a = base;
    a.push_back("--threads");
    a.push_back(threads);
    return run(a);
  };
  const Outcome one = with("1"), four = with("4");
  ASSERT_EQ(one.code, 0) << one.err;
  EXPECT_EQ(one.out, four.out);
  const auto j = nlohmann::json::parse(one.out);
  EXPECT_EQ(j["trajectory"].size(), 3u);
}
