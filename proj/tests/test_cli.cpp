#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lionxa/lidar_io.hpp"
#include "lionxa/range_projection.hpp"
#include "lionxa/scenario.hpp"

using namespace lionxa;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  static void TearDownTestSuite() { fs::remove_all(dir()); }

  static fs::path dir() {
    static const fs::path d = [] {
      fs::path p = fs::temp_directory_path() / ("lionxa_cli_" + std::to_string(::getpid()));
      fs::remove_all(p);
      fs::create_directories(p);
      return p;
    }();
    return d;
  }

  static int run(const std::string& args) {
    const std::string cmd = std::string(LIONXA_CLI_PATH) + " " + args + " >" + (dir() / "stdout.txt").string() +
                            " 2>" + (dir() / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  static std::string small_config() {
    ScenarioConfig c = builtin_scenario("synthetic-64-to-32");
    c.data = DataConfig{2, 2, 1, 1};
    const fs::path p = dir() / "small.cfg";
    std::ofstream(p) << render_scenario(c);
    return p.string();
  }

  static void write_report(const fs::path& p, double miou) {
    std::ofstream(p) << "{\"2d\":{\"miou\":" << miou << "},\"3d\":{\"miou\":" << miou
                     << "},\"ensemble\":{\"miou\":" << miou << "}}";
  }
};

}  // namespace

TEST_F(Cli, SynthWritesPairsDeterministically) {
  const fs::path a = dir() / "synth_a", b = dir() / "synth_b";
  ASSERT_EQ(run("synth --config synthetic-64-to-32 --out-dir " + a.string() + " --count 10 --seed 4"), 0);
  ASSERT_EQ(run("synth --config synthetic-64-to-32 --out-dir " + b.string() + " --count 10 --seed 4"), 0);
  int bins = 0, labels = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    bins += e.path().extension() == ".bin";
    labels += e.path().extension() == ".label";
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
  EXPECT_EQ(bins, 10);
  EXPECT_EQ(labels, 10);
}

TEST_F(Cli, UnwritableOutputIsRuntimeError) {
  const fs::path blocker = dir() / "blocker";
  std::ofstream(blocker) << "x";
  EXPECT_EQ(run("synth --config synthetic-64-to-32 --out-dir " + (blocker / "sub").string() + " --count 1"), 2);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("synth --config no-such-scenario --out-dir " + (dir() / "x").string()), 1);
  EXPECT_EQ(run("voxelize --scan " + (dir() / "missing.bin").string() + " --out " +
                (dir() / "v.bin").string() + " --voxel-size 0"),
            1);
}

TEST_F(Cli, ProjectUsesTargetSensorHeight) {
  const fs::path d = dir() / "proj";
  ASSERT_EQ(run("synth --config synthetic-64-to-32 --out-dir " + d.string() + " --count 1"), 0);
  const fs::path out = dir() / "proj.rimg";
  ASSERT_EQ(run("project --config synthetic-64-to-32 --scan " + (d / "000000.bin").string() + " --out " +
                out.string()),
            0);
  const std::string bytes = slurp(out);
  const RangeImage img = deserialize_range_image(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
  EXPECT_EQ(img.height, 32);
}

TEST_F(Cli, TargetLikeThinsSourceScansAndIsIdempotent) {
  const fs::path d = dir() / "tl";
  ASSERT_EQ(run("synth --config synthetic-64-to-32 --split source --out-dir " + d.string() + " --count 1"), 0);
  const fs::path once = dir() / "tl_once.bin", twice = dir() / "tl_twice.bin";
  ASSERT_EQ(run("targetlike --config synthetic-64-to-32 --scan " + (d / "000000.bin").string() + " --labels " +
                (d / "000000.label").string() + " --out " + once.string()),
            0);
  ASSERT_EQ(run("targetlike --config synthetic-64-to-32 --scan " + once.string() + " --out " + twice.string()), 0);
  const auto src = slurp(d / "000000.bin"), a = slurp(once), b = slurp(twice);
  EXPECT_LT(a.size(), src.size());
  EXPECT_GT(a.size(), 0u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(slurp(dir() / "tl_once.label").size() * 4, a.size());
}

TEST_F(Cli, TrainWritesOneLogLinePerIterationAndIsReproducible) {
  const std::string cfg = small_config();
  const fs::path a = dir() / "run_a", b = dir() / "run_b";
  ASSERT_EQ(run("train --config " + cfg + " --out-dir " + a.string() + " --max-iter 3 --seed 2"), 0)
      << slurp(dir() / "stderr.txt");
  ASSERT_EQ(run("train --config " + cfg + " --out-dir " + b.string() + " --max-iter 3 --seed 2"), 0);
  const std::string log = slurp(a / "run_log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
  EXPECT_EQ(log, slurp(b / "run_log.jsonl"));
  EXPECT_EQ(slurp(a / "best_2d.ckpt"), slurp(b / "best_2d.ckpt"));

  const fs::path report = dir() / "eval.json";
  EXPECT_EQ(run("eval --config " + cfg + " --checkpoint-2d " + (a / "best_2d.ckpt").string() +
                " --checkpoint-3d " + (a / "best_3d.ckpt").string() + " --out " + report.string()),
            0);
  EXPECT_NE(slurp(report).find("\"ensemble\""), std::string::npos);
}

TEST_F(Cli, EvalWithMissingCheckpointFails) {
  EXPECT_EQ(run("eval --config synthetic-64-to-32 --checkpoint-2d " + (dir() / "none_2d.ckpt").string() +
                " --checkpoint-3d " + (dir() / "none_3d.ckpt").string()),
            2);
}

TEST_F(Cli, ReportComputesClosedGap) {
  const fs::path b = dir() / "b.json", m = dir() / "m.json", o = dir() / "o.json", out = dir() / "report";
  write_report(b, 0.613);
  write_report(m, 0.689);
  write_report(o, 0.716);
  ASSERT_EQ(run("report --runs " + b.string() + " " + m.string() + " " + o.string() + " --out-dir " + out.string()),
            0);
  std::istringstream csv(slurp(out / "domain_stats.csv"));
  std::string line;
  std::getline(csv, line);
  int rows = 0;
  while (std::getline(csv, line)) {
    std::vector<double> cells;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    while (std::getline(ls, cell, ',')) cells.push_back(std::stod(cell));
    ASSERT_EQ(cells.size(), 6u);
    EXPECT_NEAR(cells[3], 7.6, 0.05);
    EXPECT_NEAR(cells[4], 10.3, 0.05);
    EXPECT_NEAR(cells[5], 73.8, 0.05);
    ++rows;
  }
  EXPECT_EQ(rows, 3);
}

TEST_F(Cli, VerifyExitCodes) {
  EXPECT_EQ(run("verify --suite losses"), 0);
  EXPECT_EQ(run("verify --suite gradcheck --inject matmul"), 3);
  EXPECT_EQ(run("verify --suite nonsense"), 1);
  EXPECT_EQ(slurp(dir() / "stdout.txt").find("gradcheck"), std::string::npos);
}
