#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "mstrace/config.hpp"
#include "mstrace/features.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mstrace;

namespace {

using Hist = std::vector<std::uint8_t>;

// Direct weighted sum, most recent entry first with weight phi^1.
double naive_decay(const Hist& h, double phi) {
  double num = 0.0, den = 0.0;
  for (std::size_t s = 0; s < h.size(); ++s) {
    const double w = std::pow(phi, static_cast<double>(s + 1));
    num += w * h[s];
    den += w;
  }
  return den > 0.0 ? num / den : 0.0;
}

PanelData single_individual(long t_min, const std::vector<int>& traces, std::vector<std::string> cov_names = {},
                            std::vector<std::vector<double>> cov = {}) {
  PanelData p;
  p.covariate_names = std::move(cov_names);
  IndividualRecord r;
  r.id = "a";
  r.t_min = t_min;
  for (int y : traces) {
    r.traces.push_back(static_cast<std::uint8_t>(y));
    r.states.emplace_back(std::nullopt);
  }
  r.covariates = std::move(cov);
  p.individuals.push_back(r);
  return p;
}

}  // namespace

TEST(DecayAverage, Examples) {
  EXPECT_EQ(decay_average(Hist{}, 0.8), 0.0);
  EXPECT_NEAR(decay_average(Hist{1, 0, 1}, 1.0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(decay_average(Hist{0, 1}, 0.8), 0.64 / 1.44, 1e-15);
  EXPECT_NEAR(decay_average(Hist{0, 1}, 0.8), 0.444444, 5e-7);
}

TEST(DecayAverage, RejectsBadPhi) {
  EXPECT_THROW(decay_average(Hist{1}, 0.0), ValidationError);
  EXPECT_THROW(decay_average(Hist{1}, 1.5), ValidationError);
  EXPECT_THROW(decay_average(Hist{1}, -0.2), ValidationError);
}

TEST(DecayAverage, RangeAndAllOnes) {
  Rng rng = derive_stream(3, StreamTag::test);
  for (int k = 0; k < 500; ++k) {
    Hist h(static_cast<std::size_t>(1 + rng() % 20));
    for (auto& v : h) v = rng() % 2;
    for (double phi : {0.3, 0.6, 0.8, 1.0}) {
      const double a = decay_average(h, phi);
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
      EXPECT_NEAR(a, naive_decay(h, phi), 1e-12);
      const bool all_ones = std::all_of(h.begin(), h.end(), [](auto v) { return v == 1; });
      EXPECT_EQ(a == 1.0, all_ones);
    }
  }
  EXPECT_EQ(decay_average(Hist{1, 1, 1, 1}, 0.7), 1.0);
}

TEST(DecayAverage, ContinuousInPhi) {
  const Hist h{0, 1, 1, 0, 0, 1, 0, 1, 0, 0, 0, 1};
  for (double phi : {0.6, 0.7, 0.8, 0.9}) {
    const double a = decay_average(h, phi);
    for (double eps : {1e-3, 1e-5, 1e-7}) {
      EXPECT_LT(std::abs(decay_average(h, phi + eps) - a), 20 * eps);
      EXPECT_LT(std::abs(decay_average(h, phi - eps) - a), 20 * eps);
    }
  }
}

TEST(DecayAverage, RunningHistoryMatchesDirectSum) {
  TraceHistory th({0.6, 0.8});
  Hist rev;
  Rng rng = derive_stream(5, StreamTag::test);
  for (int t = 0; t < 80; ++t) {
    EXPECT_NEAR(th.decay_average(0.8), naive_decay(rev, 0.8), 1e-12);
    EXPECT_NEAR(th.decay_average(0.6), naive_decay(rev, 0.6), 1e-12);
    EXPECT_NEAR(th.decay_average(1.0), naive_decay(rev, 1.0), 1e-12);
    EXPECT_NEAR(th.last_gap(), last_trace_gap(rev), 1e-15);
    const auto y = static_cast<std::uint8_t>(uniform01(rng) < 0.3);
    th.push(y);
    rev.insert(rev.begin(), y);
  }
}

TEST(LastTraceGap, Examples) {
  EXPECT_EQ(last_trace_gap(Hist{1, 0, 0}), 0.0);
  EXPECT_NEAR(last_trace_gap(Hist{0, 0, 1}), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(last_trace_gap(Hist{0, 0, 1}), 1.414214, 5e-7);
  EXPECT_EQ(last_trace_gap(Hist{}), 0.0);
  EXPECT_EQ(last_trace_gap(Hist{0, 0, 0}), 0.0);
}

TEST(SplineBasis, BoundaryValues) {
  const auto left = spline_basis(0.0);
  const auto right = spline_basis(1.0);
  ASSERT_EQ(left.size(), 5u);
  EXPECT_EQ(left, (std::vector<double>{1, 0, 0, 0, 0}));
  EXPECT_EQ(right, (std::vector<double>{0, 0, 0, 0, 1}));
}

TEST(SplineBasis, MatchesCoxDeBoorOracle) {
  for (double u : {0.0, 0.1, 1.0 / 3.0, 0.5, 0.6, 2.0 / 3.0, 0.9, 0.999, 1.0}) {
    const auto got = spline_basis(u);
    const auto want = oracle::spline_row(u);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t g = 0; g < got.size(); ++g) EXPECT_NEAR(got[g], want[g], 1e-14) << "u=" << u << " g=" << g;
  }
  const auto mid = spline_basis(0.5);
  EXPECT_NEAR(mid[0] + mid[1] + mid[2] + mid[3] + mid[4], 1.0, 1e-15);
}

TEST(SplineBasis, PartitionOfUnity) {
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double u = k / 999.0;
    const auto row = spline_basis(u);
    double sum = 0.0;
    for (double v : row) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      sum += v;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(SplineBasis, OtherDegreesMatchOracle) {
  const auto cubic = BSplineBasis::equally_spaced(3, 7);
  for (double u = 0.0; u <= 1.0; u += 0.037) {
    const auto got = cubic.evaluate(u);
    const auto want = oracle::spline_row(u, 3, {0.25, 0.5, 0.75});
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t g = 0; g < got.size(); ++g) EXPECT_NEAR(got[g], want[g], 1e-13);
  }
}

TEST(SplineBasis, RejectsOutOfRange) {
  EXPECT_THROW(spline_basis(-0.01), ValidationError);
  EXPECT_THROW(spline_basis(1.01), ValidationError);
}

TEST(TermGrammar, ParsesAndCanonicalises) {
  EXPECT_EQ(parse_term("1").canonical(), "1");
  EXPECT_EQ(parse_term("intercept").canonical(), "1");
  EXPECT_EQ(parse_term(" A( 0.8 ) ").canonical(), "A(0.8)");
  EXPECT_EQ(parse_term("A(phi)", 0.7).canonical(), "A(0.7)");
  EXPECT_EQ(parse_term("spline(age, df=5)").canonical(), "spline(age,df=5)");
  EXPECT_EQ(parse_term("I(A1=0):L").canonical(), "I(A1=0):L");
  EXPECT_EQ(parse_term("spline(age,df=5):I(A1=0)").width(), 5);
  EXPECT_EQ(parse_term("election(lead=1)").canonical(), "election(lead=1)");
  EXPECT_EQ(parse_term("I(group=3)").canonical(), "I(group=3)");
}

TEST(TermGrammar, Errors) {
  for (const char* bad : {"A(0)", "A(1.2)", "spline(age,df=x)", "a:b:c", "election(foo=1)", "", "A(", "3x"})
    EXPECT_THROW(parse_term(bad), ValidationError) << bad;
}

TEST(DesignConfig, RejectsDuplicatesAndTransitionTraceTerms) {
  DesignConfig c;
  c.eta0 = {"1", "A(0.8)", "A( 0.8 )"};
  EXPECT_THROW(resolve_design(c), ValidationError);
  DesignConfig t;
  t.beta0 = {"1", "L"};
  EXPECT_THROW(resolve_design(t), ValidationError);
  t.allow_trace_terms_in_transitions = true;
  EXPECT_NO_THROW(resolve_design(t));
  DesignConfig p;
  p.phi = 0.0;
  EXPECT_THROW(resolve_design(p), ValidationError);
}

TEST(AssembleDesigns, InterceptOnly) {
  auto panel = testutil::random_complete_panel(3, 6, 1);
  const Designs d = assemble_designs(panel, DesignConfig{});
  for (Block b : kBlocks) {
    const auto& m = d.block(b).rows;
    ASSERT_EQ(m.cols(), 1);
    EXPECT_TRUE((m.array() == 1.0).all());
  }
}

TEST(AssembleDesigns, ElectionDummy) {
  DesignConfig cfg;
  cfg.beta0 = {"election"};
  cfg.eta0 = {"election(lead=1)"};
  const Designs d = assemble_designs(single_individual(1, std::vector<int>(68, 0)), cfg);
  std::vector<long> on, on_lambda;
  for (long t = 1; t <= 68; ++t) {
    if (d.block(Block::beta0).rows(t - 1, 0) == 1.0) on.push_back(t);
    if (d.block(Block::eta0).rows(t - 1, 0) == 1.0) on_lambda.push_back(t);
  }
  EXPECT_EQ(on, (std::vector<long>{10, 11, 24, 25, 34, 35, 44, 45, 54, 55, 64, 65}));
  EXPECT_EQ(on_lambda, (std::vector<long>{9, 10, 23, 24, 33, 34, 43, 44, 53, 54, 63, 64}));
}

TEST(AssembleDesigns, OnlyTraceAtStartIsZeroed) {
  DesignConfig cfg;
  cfg.eta0 = {"A(1)", "A(0.8)", "L", "I(A1=0)", "I(A1=0):L"};
  const Designs d = assemble_designs(single_individual(7, {1, 0, 0, 0, 0, 0}), cfg);
  const auto& m = d.block(Block::eta0).rows;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    EXPECT_EQ(m(r, 0), 0.0);
    EXPECT_EQ(m(r, 1), 0.0);
    // L still counts from the zeroed trace.
    const double gap = r == 0 ? 0.0 : std::sqrt(static_cast<double>(r - 1));
    EXPECT_NEAR(m(r, 2), gap, 1e-14);
    EXPECT_EQ(m(r, 3), 1.0);
    EXPECT_NEAR(m(r, 4), gap, 1e-14);
  }
  EXPECT_EQ(d.traces[0], 0);
}

TEST(AssembleDesigns, FeaturesFollowHistory) {
  DesignConfig cfg;
  cfg.zero_first_trace = true;
  cfg.eta0 = {"A(1)", "A(0.8)", "L", "I(A1=0)", "I(A1=0):L"};
  const std::vector<int> y{1, 0, 1, 0, 0, 1, 1, 0};
  const Designs d = assemble_designs(single_individual(1, y), cfg);
  const auto& m = d.block(Block::eta0).rows;
  Hist rev, raw;  // zeroed and raw histories, most recent first
  for (std::size_t o = 0; o < y.size(); ++o) {
    const auto r = static_cast<Eigen::Index>(o);
    EXPECT_NEAR(m(r, 0), naive_decay(rev, 1.0), 1e-14);
    EXPECT_NEAR(m(r, 1), naive_decay(rev, 0.8), 1e-14);
    // L keeps counting from the membership trace.
    EXPECT_NEAR(m(r, 2), last_trace_gap(raw), 1e-14);
    const bool none = std::none_of(rev.begin(), rev.end(), [](auto v) { return v == 1; });
    EXPECT_EQ(m(r, 3), none ? 1.0 : 0.0);
    EXPECT_EQ(m(r, 4), m(r, 3) * m(r, 2));
    rev.insert(rev.begin(), static_cast<std::uint8_t>(o == 0 ? 0 : y[o]));
    raw.insert(raw.begin(), static_cast<std::uint8_t>(y[o]));
  }
  // Boundary indicator at t_min + 1 after zeroing.
  EXPECT_EQ(m(1, 3), 1.0);
  EXPECT_EQ(m(1, 2), 0.0);
  // Before the second trace at t_min + 2, L:I(A1=0) = sqrt(1).
  EXPECT_EQ(m(2, 4), 1.0);
}

TEST(AssembleDesigns, SplineColumnsAndInteraction) {
  DesignConfig cfg;
  cfg.beta0 = {"spline(age,df=5)"};
  cfg.eta0 = {"1", "spline(age,df=5):I(A1=0)"};
  std::vector<double> ages{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  const Designs d = assemble_designs(single_individual(1, {0, 0, 1, 0, 0, 0}, {"age"}, {ages}), cfg);
  ASSERT_EQ(d.block(Block::beta0).columns.size(), 5u);
  ASSERT_EQ(d.block(Block::eta0).columns.size(), 6u);
  for (std::size_t o = 0; o < ages.size(); ++o) {
    const auto want = oracle::spline_row(ages[o]);
    const double ind = o <= 2 ? 1.0 : 0.0;  // first real trace at offset 2 is seen from offset 3
    for (std::size_t g = 0; g < 5; ++g) {
      EXPECT_NEAR(d.block(Block::beta0).rows(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(g)), want[g],
                  1e-14);
      EXPECT_NEAR(d.block(Block::eta0).rows(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(g + 1)),
                  want[g] * ind, 1e-14);
    }
  }
  auto bad = single_individual(1, {0, 0}, {"age"}, {{0.5, 1.5}});
  try {
    assemble_designs(bad, cfg);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("t=2"), std::string::npos) << e.what();
  }
}

TEST(AssembleDesigns, MissingCovariateIsAnError) {
  DesignConfig cfg;
  cfg.beta0 = {"1", "cohort"};
  EXPECT_THROW(assemble_designs(testutil::random_complete_panel(2, 3, 1), cfg), ValidationError);
}

TEST(AssembleDesigns, Deterministic) {
  auto panel = testutil::random_complete_panel(20, 15, 9);
  DesignConfig cfg;
  cfg.beta0 = {"1", "x1"};
  cfg.eta0 = {"1", "A(1)", "A(0.8)", "L", "I(A1=0)", "I(A1=0):L", "x1:A(0.8)"};
  const Designs a = assemble_designs(panel, cfg);
  const Designs b = assemble_designs(panel, cfg);
  for (Block k : kBlocks) {
    const auto& x = a.block(k).rows;
    const auto& y = b.block(k).rows;
    ASSERT_EQ(x.size(), y.size());
    EXPECT_EQ(std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())), 0);
  }
}

TEST(AssembleDesigns, WarnsOnNearlyCollinearDecayColumns) {
  // Alternating traces make A(0.95) and A(1) nearly identical late in the span.
  PanelData p;
  for (int i = 0; i < 5; ++i) {
    std::vector<int> y(60);
    for (std::size_t t = 0; t < y.size(); ++t) y[t] = (t % 3 == 0) ? 1 : 0;
    auto one = single_individual(1, y);
    one.individuals[0].id = "p" + std::to_string(i);
    p.individuals.push_back(one.individuals[0]);
  }
  DesignConfig cfg;
  cfg.eta0 = {"1", "A(0.99)", "A(1)"};
  EXPECT_FALSE(assemble_designs(p, cfg).warnings.empty());
  cfg.eta0 = {"1", "A(0.3)", "A(1)"};
  EXPECT_TRUE(assemble_designs(p, cfg).warnings.empty());
}

// Study configurations must parse and assemble against a panel carrying the
// covariates they reference.
TEST(StudyConfigs, ParseAndAssemble) {
  const std::filesystem::path dir = std::filesystem::path(MSTRACE_SOURCE_DIR) / "configs";
  PanelData panel;
  panel.covariate_names = {"age", "cohort", "group", "gender"};
  Rng rng = derive_stream(17, StreamTag::test);
  for (int i = 0; i < 30; ++i) {
    IndividualRecord r;
    r.id = "n" + std::to_string(i);
    r.t_min = 1 + static_cast<long>(rng() % 20);
    const std::size_t len = 68 - static_cast<std::size_t>(r.t_min) + 1;
    const double cohort = uniform01(rng);
    const double group = static_cast<double>(1 + i % 9);
    const double gender = static_cast<double>(i % 2);
    r.covariates.assign(4, {});
    for (std::size_t o = 0; o < len; ++o) {
      r.states.emplace_back(std::nullopt);
      r.traces.push_back(o == 0 || uniform01(rng) < 0.2 ? 1 : 0);
      r.covariates[0].push_back(static_cast<double>(o) / 67.0);
      r.covariates[1].push_back(cohort);
      r.covariates[2].push_back(group);
      r.covariates[3].push_back(gender);
    }
    panel.individuals.push_back(std::move(r));
  }
  const std::vector<std::pair<std::string, std::array<std::size_t, 3>>> expected{
      {"study1_model1.json", {1, 1, 1}},  {"study1_model2.json", {1, 1, 6}},  {"study1_model3.json", {5, 5, 9}},
      {"study1_model4.json", {6, 6, 10}}, {"study1_model5.json", {6, 6, 10}}, {"study1_model3_multi_phi.json", {5, 5, 10}},
      {"study2_model1.json", {9, 9, 45}}, {"study2_model2.json", {10, 10, 46}}};
  for (const auto& [file, widths] : expected) {
    SCOPED_TRACE(file);
    const RunConfig rc = load_run_config((dir / file).string());
    const Designs d = assemble_designs(panel, rc.design);
    for (Block b : kBlocks) EXPECT_EQ(d.block(b).columns.size(), widths[static_cast<std::size_t>(b)]);
    for (Block b : kBlocks) EXPECT_TRUE(d.block(b).rows.allFinite());
  }
}
