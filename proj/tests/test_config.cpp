#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "mstrace/config.hpp"
#include "mstrace/panel_io.hpp"

using namespace mstrace;

namespace {

std::string message_of(std::string_view text) {
  try {
    parse_run_config(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfig, SyntaxErrorsNameTheLine) {
  const std::string msg = message_of("{\n  \"seed\": 1,\n  \"sampler\": {\"iterations\": }\n}\n");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(RunConfig, FieldErrorsNameTheField) {
  EXPECT_NE(message_of(R"({"sampler": {"iterations": "many"}})").find("sampler.iterations"), std::string::npos);
  EXPECT_NE(message_of(R"({"sampler": {"itterations": 10}})").find("sampler.itterations"), std::string::npos);
  EXPECT_NE(message_of(R"({"sampler": {"prior": "cauchy"}})").find("sampler.prior"), std::string::npos);
  EXPECT_NE(message_of(R"({"dgp": {"observation": "rows"}})").find("dgp.observation"), std::string::npos);
  EXPECT_NE(message_of(R"({"holdout": {"fraction": 0}})").find("holdout.fraction"), std::string::npos);
  EXPECT_NE(message_of(R"({"truth": {"beta0": ["x"]}})").find("truth.beta0"), std::string::npos);
  EXPECT_NE(message_of(R"j({"design": {"eta0": ["1", "A(2)"]}})j").find("design"), std::string::npos);
  EXPECT_NE(message_of(R"({"colour": 1})").find("colour"), std::string::npos);
  EXPECT_NE(message_of(R"({"sampler": {"burn_in": 10, "iterations": 5}})"), "");
}

TEST(RunConfig, DefaultsAndRoundTrip) {
  const auto c = parse_run_config(R"({"seed": 9, "dgp": {"n_individuals": 30},
      "sampler": {"iterations": 50, "burn_in": 10, "prior": "gaussian:3", "weights": "modular:0.1"},
      "holdout": {"fraction": 0.25}, "truth": {"beta0": [-4, null]}})");
  EXPECT_EQ(c.sampler.seed, 9u);
  EXPECT_EQ(c.dgp->seed, 9u);
  EXPECT_EQ(c.holdout_seed(), 9u);
  ASSERT_EQ(c.truth[0].size(), 2u);
  EXPECT_FALSE(c.truth[0][1].has_value());
  const Json j = run_config_to_json(c);
  const auto back = run_config_from_json(j);
  EXPECT_EQ(run_config_to_json(back).dump(), j.dump());
}

TEST(RunConfig, ShippedConfigsLoad) {
  for (const char* name : {"experiment1_case1", "experiment1_case2", "experiment1_case3", "experiment2_well",
                           "experiment2_mis", "evaluate_autoregressive", "evaluate_plain", "study1_model3_modular"}) {
    const std::string path = std::string(MSTRACE_SOURCE_DIR) + "/configs/" + name + ".json";
    EXPECT_NO_THROW(load_run_config(path)) << path;
  }
  const auto c1 = load_run_config(std::string(MSTRACE_SOURCE_DIR) + "/configs/experiment1_case1.json");
  const auto e1 = experiment1_config(1);
  EXPECT_EQ(dgp_to_json(*c1.dgp)["gamma0"], dgp_to_json(e1.dgp)["gamma0"]);
  EXPECT_EQ(c1.design.beta0, e1.design.beta0);
}

TEST(PanelIo, CsvAndJsonlAgree) {
  for (const char* name : {"small_panel.csv", "small_panel.jsonl"}) {
    const auto p = load_panel(std::string(MSTRACE_SOURCE_DIR) + "/tests/fixtures/" + name);
    EXPECT_EQ(p.individuals.size(), 3u) << name;
  }
  const auto a = load_panel(std::string(MSTRACE_SOURCE_DIR) + "/tests/fixtures/small_panel.csv");
  const auto b = load_panel(std::string(MSTRACE_SOURCE_DIR) + "/tests/fixtures/small_panel.jsonl");
  EXPECT_EQ(a, b);
  std::istringstream in(panel_to_jsonl(a));
  EXPECT_EQ(panel_from_jsonl(in), a);
}
