// Drives the installed binary as a subprocess and checks the documented
// command contracts: outputs, determinism, and exit codes.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "hsq/pyramid.hpp"

namespace {

struct CmdResult {
  int code = -1;
  std::string output;  // stdout and stderr combined
};

CmdResult run_cli(const std::string& args) {
  static int counter = 0;
  const std::string capture =
      testing::TempDir() + "cli_capture_" + std::to_string(counter++) + ".txt";
  const std::string cmd = std::string(HSQ_CLI_PATH) + " " + args + " > " + capture +
                          " 2>&1";
  const int rc = std::system(cmd.c_str());
  CmdResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream is(capture);
  std::stringstream ss;
  ss << is.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

TEST(CliSynth, WritesAReadableDeterministicPair) {
  const std::string dir = testing::TempDir();
  const auto r1 = run_cli("synth --height 64 --width 64 --seed 9 --cnn-out " + dir +
                          "s1c.hsqf --vit-out " + dir + "s1v.hsqf");
  ASSERT_EQ(r1.code, 0) << r1.output;

  const auto cnn = hsq::read_pyramid_file<double>(dir + "s1c.hsqf");
  EXPECT_EQ(cnn.levels[0].tokens.rows(), 256u);
  EXPECT_EQ(cnn.levels[3].tokens.rows(), 4u);
  EXPECT_EQ(cnn.levels[0].channels, 96u);

  const auto r2 = run_cli("synth --height 64 --width 64 --seed 9 --cnn-out " + dir +
                          "s2c.hsqf --vit-out " + dir + "s2v.hsqf");
  ASSERT_EQ(r2.code, 0);
  EXPECT_EQ(slurp(dir + "s1c.hsqf"), slurp(dir + "s2c.hsqf"));
  EXPECT_EQ(slurp(dir + "s1v.hsqf"), slurp(dir + "s2v.hsqf"));
  // The two branches themselves differ.
  EXPECT_NE(slurp(dir + "s1c.hsqf"), slurp(dir + "s1v.hsqf"));
}

TEST(CliSynth, RejectsIndivisibleSizes) {
  const std::string dir = testing::TempDir();
  const auto r = run_cli("synth --height 100 --width 100 --cnn-out " + dir +
                         "xc.hsqf --vit-out " + dir + "xv.hsqf");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("divisible"), std::string::npos) << r.output;
}

class CliForward : public testing::Test {
protected:
  void SetUp() override {
    const auto r = run_cli("synth --height 32 --width 32 --channels 4,4,4,4 --seed 2" +
                           std::string(" --cnn-out ") + cnn_ + " --vit-out " + vit_);
    ASSERT_EQ(r.code, 0) << r.output;
  }
  std::string dir_ = testing::TempDir();
  std::string cnn_ = dir_ + "fwd_c.hsqf";
  std::string vit_ = dir_ + "fwd_v.hsqf";
  std::string model_flags_ = "--q 4 --d 8 --experts 2 --top-k 2 --seed 3";
};

TEST_F(CliForward, CsvContractHoldsAndRunsAreByteIdentical) {
  const std::string base = "forward --cnn " + cnn_ + " --vit " + vit_ + " " + model_flags_;
  const auto r1 = run_cli(base + " --out " + dir_ + "f1.csv");
  ASSERT_EQ(r1.code, 0) << r1.output;

  const std::string csv = slurp(dir_ + "f1.csv");
  std::istringstream lines(csv);
  std::string line;
  ASSERT_TRUE(std::getline(lines, line));
  EXPECT_EQ(line, "input_id,p_benign,p_malignant,stage,expert,count");
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    std::stringstream fields(line);
    std::string id, p0, p1;
    std::getline(fields, id, ',');
    std::getline(fields, p0, ',');
    std::getline(fields, p1, ',');
    EXPECT_EQ(id, "fwd_c");
    EXPECT_NEAR(std::stod(p0) + std::stod(p1), 1.0, 1e-6);
  }
  // Four enabled stages, two experts each.
  EXPECT_EQ(rows, 8u);

  const auto r2 = run_cli(base + " --out " + dir_ + "f2.csv");
  ASSERT_EQ(r2.code, 0);
  EXPECT_EQ(slurp(dir_ + "f2.csv"), csv);
}

TEST_F(CliForward, CheckpointReproducesTheFreshRunExactly) {
  const std::string base = "forward --cnn " + cnn_ + " --vit " + vit_ + " " + model_flags_;
  const auto r1 = run_cli(base + " --out " + dir_ + "g1.csv --save-checkpoint " + dir_ +
                          "m.hsqw");
  ASSERT_EQ(r1.code, 0) << r1.output;

  const auto r2 = run_cli("forward --cnn " + cnn_ + " --vit " + vit_ + " --checkpoint " +
                          dir_ + "m.hsqw --out " + dir_ + "g2.csv --save-checkpoint " +
                          dir_ + "m2.hsqw");
  ASSERT_EQ(r2.code, 0) << r2.output;
  EXPECT_EQ(slurp(dir_ + "g2.csv"), slurp(dir_ + "g1.csv"));
  // Loading and re-saving the checkpoint is byte-stable too.
  EXPECT_EQ(slurp(dir_ + "m2.hsqw"), slurp(dir_ + "m.hsqw"));
}

TEST_F(CliForward, ExitCodesDistinguishFailureClasses) {
  const auto io = run_cli("forward --cnn /nonexistent.hsqf --vit " + vit_);
  EXPECT_EQ(io.code, 3);
  EXPECT_NE(io.output.find("i/o error"), std::string::npos) << io.output;

  const auto cfg = run_cli("forward --cnn " + cnn_ + " --vit " + vit_ +
                           " --experts 2 --top-k 5");
  EXPECT_EQ(cfg.code, 2);

  const auto parse = run_cli("forward --no-such-flag");
  EXPECT_EQ(parse.code, 2);

  // Branch files with different geometry violate the forward contract.
  const auto r = run_cli("synth --height 64 --width 64 --channels 4,4,4,4 --seed 2 "
                         "--cnn-out " + dir_ + "tall_c.hsqf --vit-out " + dir_ +
                         "tall_v.hsqf");
  ASSERT_EQ(r.code, 0);
  const auto contract = run_cli("forward --cnn " + dir_ + "tall_c.hsqf --vit " + vit_ +
                                " " + model_flags_);
  EXPECT_EQ(contract.code, 4);
  EXPECT_NE(contract.output.find("contract violation"), std::string::npos)
      << contract.output;
}

TEST(CliGradcheck, ReportsEveryGroupOnceAndPasses) {
  const auto r = run_cli("gradcheck --q 2 --d 4 --channels 2,2,2,2 --stages 3 --seed 1");
  ASSERT_EQ(r.code, 0) << r.output;

  std::istringstream lines(r.output);
  std::string line;
  std::set<std::string> groups;
  std::size_t group_lines = 0;
  std::string summary;
  while (std::getline(lines, line)) {
    if (line.rfind("group ", 0) == 0) {
      ++group_lines;
      groups.insert(line.substr(6, line.find(' ', 6) - 6));
      EXPECT_NE(line.find(" PASS"), std::string::npos) << line;
    }
    if (line.rfind("gradcheck:", 0) == 0) summary = line;
  }
  EXPECT_GT(group_lines, 0u);
  EXPECT_EQ(groups.size(), group_lines);  // no group listed twice
  EXPECT_NE(summary.find(std::to_string(group_lines) + " groups"), std::string::npos)
      << summary;
}

TEST(CliGradcheck, FaultInjectionTripsTheChecker) {
  const auto r = run_cli(
      "gradcheck --q 2 --d 4 --channels 2,2,2,2 --stages 3 --seed 1 --fault-injection");
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.output.find(" FAIL"), std::string::npos);
}

TEST(CliAblate, StageSchemeSweepEmitsOneRowPerPoint) {
  const std::string out = testing::TempDir() + "scheme.csv";
  const auto r = run_cli("ablate --axis stage_scheme --height 32 --width 32 --seed 1 "
                         "--reps 3 --out " + out);
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(out);
  EXPECT_EQ(count_lines(csv), 5u);  // header + 4 schemes
  for (const char* label : {"stages_4", "stages_34", "stages_234", "stages_1234"}) {
    EXPECT_NE(csv.find(label), std::string::npos) << csv;
  }

  const auto bad = run_cli("ablate --axis nonsense");
  EXPECT_EQ(bad.code, 2);
}

TEST(CliEval, ReportsMetricsAndFailureClasses) {
  const std::string dir = testing::TempDir();
  {
    std::ofstream os(dir + "sep.csv");
    os << "id,group,score,label\na,g1,0.9,1\nb,g2,0.8,1\nc,g3,0.2,0\nd,g4,0.1,0\n";
  }
  const auto good = run_cli("eval " + dir + "sep.csv");
  ASSERT_EQ(good.code, 0) << good.output;
  EXPECT_NE(good.output.find("auc=1.000000"), std::string::npos);
  EXPECT_NE(good.output.find("rows=4"), std::string::npos);

  // Grouping collapses the two lesion rows of patient g1.
  {
    std::ofstream os(dir + "grp.csv");
    os << "id,group,score,label\na,g1,0.4,1\nb,g1,0.9,1\nc,g2,0.5,0\n";
  }
  const auto grouped = run_cli("eval " + dir + "grp.csv");
  ASSERT_EQ(grouped.code, 0);
  EXPECT_NE(grouped.output.find("rows=2"), std::string::npos);
  EXPECT_NE(grouped.output.find("auc=1.000000"), std::string::npos);
  const auto ungrouped = run_cli("eval " + dir + "grp.csv --group-rule none");
  EXPECT_NE(ungrouped.output.find("rows=3"), std::string::npos);

  {
    std::ofstream os(dir + "one_class.csv");
    os << "id,group,score,label\na,g1,0.9,1\nb,g2,0.8,1\n";
  }
  const auto single = run_cli("eval " + dir + "one_class.csv");
  EXPECT_EQ(single.code, 4);
  EXPECT_NE(single.output.find("both classes"), std::string::npos) << single.output;

  {
    std::ofstream os(dir + "bad_header.csv");
    os << "lesion,patient,score,label\na,g1,0.9,1\n";
  }
  EXPECT_EQ(run_cli("eval " + dir + "bad_header.csv").code, 3);
  EXPECT_EQ(run_cli("eval " + dir + "sep.csv --group-rule median").code, 2);
  EXPECT_EQ(run_cli("eval /nonexistent/scores.csv").code, 3);
}

TEST(CliBench, EnforcesRepetitionsAndReportsStats) {
  const std::string flags = " --q 4 --d 8 --experts 2 --top-k 1 --channels 4,4,4,4"
                            " --height 32 --width 32";
  const auto ok = run_cli("bench --reps 3" + flags);
  ASSERT_EQ(ok.code, 0) << ok.output;
  EXPECT_NE(ok.output.find("median_ms="), std::string::npos);
  EXPECT_NE(ok.output.find("p95_ms="), std::string::npos);
  EXPECT_EQ(run_cli("bench --reps 2" + flags).code, 2);
}

}  // namespace
