#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "mstrace/config.hpp"
#include "mstrace/panel_io.hpp"

namespace fs = std::filesystem;
using namespace mstrace;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mstrace_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(MSTRACE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTiny = R"j({"seed": 2,
 "dgp": {"n_individuals": 40, "span_length": 12, "observed_fraction": 0.5,
         "lambda": [["1", -1], ["A(0.8)", 1.5]]},
 "design": {"beta0": ["1"], "beta1": ["1"], "eta0": ["1", "A(phi)"], "zero_first_trace": false},
 "sampler": {"iterations": 40, "burn_in": 10, "window": 20, "m_metropolis": 5},
 "holdout": {"fraction": 0.2}})j";

std::string config_path(const char* name) { return std::string(MSTRACE_SOURCE_DIR) + "/configs/" + name; }

}  // namespace

TEST(Cli, SimulateIsReproducible) {
  const auto dir = scratch("simulate");
  const std::string cfg = config_path("experiment1_case1.json");
  ASSERT_EQ(run("simulate --config " + cfg + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run("simulate --config " + cfg + " --out " + (dir / "b").string()), 0);
  const auto ma = Json::parse(slurp(dir / "a" / "manifest.json"));
  const auto mb = Json::parse(slurp(dir / "b" / "manifest.json"));
  EXPECT_EQ(ma.at("output_hashes"), mb.at("output_hashes"));
  EXPECT_EQ(slurp(dir / "a" / "panel.csv"), slurp(dir / "b" / "panel.csv"));
  ASSERT_EQ(run("simulate --config " + cfg + " --seed 99 --out " + (dir / "c").string()), 0);
  EXPECT_NE(slurp(dir / "a" / "panel.csv"), slurp(dir / "c" / "panel.csv"));
}

TEST(Cli, SimulateCase3Sizes) {
  const auto dir = scratch("case3");
  ASSERT_EQ(run("simulate --config " + config_path("experiment1_case3.json") + " --format jsonl --out " +
                dir.string()),
            0);
  const auto panel = load_panel((dir / "panel.jsonl").string());
  long observed = 0;
  for (const auto& r : panel.individuals) observed += r.fully_observed();
  EXPECT_EQ(panel.individuals.size(), 1000u);
  EXPECT_EQ(observed, 200);
}

TEST(Cli, ValidationErrorsExitWithTwo) {
  const auto dir = scratch("errors");
  write(dir / "zero.json", R"({"dgp": {"n_individuals": 0}})");
  EXPECT_EQ(run("simulate --config " + (dir / "zero.json").string() + " --out " + (dir / "z").string()), 2);
  write(dir / "tiny.json", kTiny);
  write(dir / "bad.csv", "id,t,x,y\na,1,1,1\n");
  EXPECT_EQ(run("fit --panel " + (dir / "bad.csv").string() + " --config " + (dir / "tiny.json").string() +
                " --out " + (dir / "f").string()),
            2);
  write(dir / "broken.json", "{\"seed\": ");
  EXPECT_EQ(run("validate-config --config " + (dir / "broken.json").string()), 2);
  EXPECT_EQ(run("validate-config --config " + (dir / "tiny.json").string()), 0);
}

TEST(Cli, HoldoutFractionMustBePositive) {
  const auto dir = scratch("holdout0");
  write(dir / "tiny.json", kTiny);
  ASSERT_EQ(run("simulate --config " + (dir / "tiny.json").string() + " --out " + (dir / "sim").string()), 0);
  EXPECT_EQ(run("evaluate --panel " + (dir / "sim" / "panel.csv").string() + " --config " +
                (dir / "tiny.json").string() + " --holdout 0 --out " + (dir / "e").string()),
            2);
}

TEST(Cli, PhiSweepGivesOneLossPerValue) {
  const auto dir = scratch("phi");
  write(dir / "tiny.json", kTiny);
  ASSERT_EQ(run("simulate --config " + (dir / "tiny.json").string() + " --out " + (dir / "sim").string()), 0);
  ASSERT_EQ(run("evaluate --panel " + (dir / "sim" / "panel.csv").string() + " --config " +
                (dir / "tiny.json").string() + " --phi 0.6,0.7,0.8,0.9 --baseline no-traces --out " +
                (dir / "e").string()),
            0);
  const auto table = Json::parse(slurp(dir / "e" / "loss_table.json"));
  ASSERT_EQ(table.at("models").size(), 5u);
  for (const auto& m : table.at("models")) EXPECT_TRUE(m.at("mean_loss").is_number());
  EXPECT_EQ(table["models"][4]["model"], "no-traces baseline");
  // A sweep over a design without A(phi) would silently repeat one model.
  EXPECT_EQ(run("evaluate --panel " + (dir / "sim" / "panel.csv").string() + " --config " +
                config_path("evaluate_plain.json") + " --phi 0.6 --out " + (dir / "e2").string()),
            2);
}

TEST(Cli, FitCheckpointsDiagnoseAndPlot) {
  const auto dir = scratch("fit");
  write(dir / "tiny.json", kTiny);
  const std::string panel = (dir / "sim" / "panel.csv").string();
  const std::string cfg = (dir / "tiny.json").string();
  ASSERT_EQ(run("simulate --config " + cfg + " --out " + (dir / "sim").string()), 0);
  ASSERT_EQ(run("fit --panel " + panel + " --config " + cfg + " --out " + (dir / "one").string()), 0);
  ASSERT_EQ(run("fit --panel " + panel + " --config " + cfg + " --checkpoint-every 7 --out " + (dir / "two").string()),
            0);
  EXPECT_EQ(slurp(dir / "one" / "draws.csv"), slurp(dir / "two" / "draws.csv"));
  EXPECT_EQ(run("fit --panel " + panel + " --config " + cfg + " --resume --out " + (dir / "two").string()), 0);
  EXPECT_EQ(slurp(dir / "one" / "draws.csv"), slurp(dir / "two" / "draws.csv"));

  ASSERT_EQ(run("diagnose --run " + (dir / "one").string() + " --quantiles 0.1,0.9 --out " + (dir / "dg").string()), 0);
  const auto summary = Json::parse(slurp(dir / "dg" / "summary.json"));
  EXPECT_FALSE(summary.empty());
  ASSERT_EQ(run("plot-data --run " + (dir / "one").string() + " --block eta0 --covariate age --grid 0:1:5 --out " +
                (dir / "pd").string()),
            0);
  std::istringstream curve(slurp(dir / "pd" / "curve.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(curve, line)) ++lines;
  EXPECT_EQ(lines, 6);
}

TEST(Cli, OutputRootFromEnvironment) {
  const auto dir = scratch("env");
  const std::string cmd = "MSTRACE_OUTPUT_ROOT=" + dir.string() + " " + std::string(MSTRACE_CLI) +
                          " simulate --config " + config_path("experiment1_case1.json") + " >/dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  bool found = false;
  for (const auto& e : fs::recursive_directory_iterator(dir)) found = found || e.path().filename() == "panel.csv";
  EXPECT_TRUE(found);
}
