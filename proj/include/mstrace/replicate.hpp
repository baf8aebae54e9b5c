#pragma once

// End-to-end runs of the two synthetic experiments: simulate, fit, summarise,
// and check the fitted 90% intervals against the generating coefficients.

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mstrace/config.hpp"
#include "mstrace/diagnostics.hpp"
#include "mstrace/sampler.hpp"
#include "mstrace/synthgen.hpp"

namespace mstrace {

struct IntervalCheck {
  std::string block, name;
  double lo = 0.0, hi = 0.0;
  std::optional<double> truth;

  bool contains() const { return !truth || (lo <= *truth && *truth <= hi); }
  double width() const { return hi - lo; }
};

struct ChainReport {
  std::string label;
  std::uint64_t seed = 0;
  SummaryTable summary;
  std::vector<IntervalCheck> intervals;
  std::array<double, 3> acceptance{};
  std::array<long, 3> mle_failures{};

  const IntervalCheck& interval(std::string_view block, std::string_view name) const {
    for (const auto& c : intervals)
      if (c.block == block && c.name == name) return c;
    throw ValidationError("no interval for " + std::string(block) + "/" + std::string(name));
  }
  bool all_contain() const {
    return std::all_of(intervals.begin(), intervals.end(), [](const auto& c) { return c.contains(); });
  }
  double min_ess() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& r : summary.rows) m = std::min(m, std::isnan(r.ess) ? 0.0 : r.ess);
    return m;
  }
  double max_rhat() const {
    double m = 0.0;
    for (const auto& r : summary.rows) m = std::max(m, std::isnan(r.rhat) ? std::numeric_limits<double>::infinity() : r.rhat);
    return m;
  }
};

struct ReplicateOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  long iterations = 5000;
  long burn_in = 200;
  unsigned threads = 1;
  std::function<void(const std::string&)> progress;
};

/// Simulates the setup's panel with `seed`, fits it, and checks 90% intervals.
inline ChainReport run_setup(const ExperimentSetup& setup, std::uint64_t seed, const ReplicateOptions& opt) {
  SyntheticDGP dgp = setup.dgp;
  dgp.seed = seed;
  SamplerConfig sc = setup.sampler;
  sc.seed = seed;
  sc.iterations = opt.iterations;
  sc.burn_in = opt.burn_in;
  sc.threads = opt.threads;
  sc.window = std::min(sc.window, sc.iterations - sc.burn_in);
  const SimulatedPanel sim = simulate_panel(dgp);
  const PosteriorDraws draws = run_mcmc(sim.panel, setup.design, sc);

  ChainReport r;
  r.label = setup.label;
  r.seed = seed;
  r.summary = summarize(draws);
  for (Block b : kBlocks) {
    const auto bi = static_cast<std::size_t>(b);
    r.acceptance[bi] = draws.acceptance_rate(b);
    r.mle_failures[bi] = draws.mle_failures[bi];
    for (std::size_t j = 0; j < draws.columns[bi].size(); ++j) {
      const auto& s = r.summary.find(block_name(b), draws.columns[bi][j]);
      IntervalCheck c{s.block, s.name, s.quantiles.front(), s.quantiles.back(), std::nullopt};
      if (j < setup.truth[bi].size()) c.truth = setup.truth[bi][j];
      r.intervals.push_back(c);
    }
  }
  if (opt.progress) {
    std::ostringstream msg;
    msg << setup.label << " seed " << seed << ": min ESS " << format_double(std::round(r.min_ess()))
        << ", max R-hat " << format_double(std::round(r.max_rhat() * 1e4) / 1e4);
    opt.progress(msg.str());
  }
  return r;
}

inline std::string format_interval(const IntervalCheck& c) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << '[' << c.lo << ',' << c.hi << ']';
  return s.str();
}

namespace detail {
inline std::string row_label(const IntervalCheck& c) {
  const std::string block = c.block == "beta0" ? "gamma0" : c.block == "beta1" ? "gamma1" : "lambda";
  return block + ", " + c.name;
}

/// Interval table layout: coefficient rows, one column per arm,
/// plus the true value.
inline std::string interval_table(const std::vector<const ChainReport*>& arms, const std::vector<std::string>& heads) {
  std::vector<std::string> labels;
  std::vector<std::string> truths;
  for (const auto* a : arms)
    for (const auto& c : a->intervals)
      if (std::find(labels.begin(), labels.end(), row_label(c)) == labels.end()) {
        labels.push_back(row_label(c));
        truths.push_back(c.truth ? format_double(*c.truth) : "");
      }
  std::vector<std::vector<std::string>> cells{{""}};
  for (const auto& h : heads) cells[0].push_back(h);
  cells[0].push_back("True value");
  for (std::size_t k = 0; k < labels.size(); ++k) {
    std::vector<std::string> row{labels[k]};
    for (const auto* a : arms) {
      std::string entry;
      for (const auto& c : a->intervals)
        if (row_label(c) == labels[k]) entry = format_interval(c);
      row.push_back(entry);
    }
    row.push_back(truths[k]);
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> w(cells[0].size(), 0);
  for (const auto& row : cells)
    for (std::size_t k = 0; k < row.size(); ++k) w[k] = std::max(w[k], row[k].size());
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t k = 0; k < row.size(); ++k)
      out << (k ? "  " : "") << (k ? std::right : std::left) << std::setw(static_cast<int>(w[k])) << row[k];
    out << '\n';
  }
  return out.str();
}

inline std::string pass_line(bool pass, const std::string& what, long hits, long total) {
  return std::string(pass ? "PASS" : "FAIL") + "  " + what + " (" + std::to_string(hits) + "/" +
         std::to_string(total) + " seeds)";
}
}  // namespace detail

struct Experiment1Report {
  std::array<std::vector<ChainReport>, 3> cases;
  long case2_contains = 0, case3_contains = 0, narrower = 0;

  long seeds() const { return static_cast<long>(cases[0].size()); }
  long needed() const { return seeds() - seeds() / 5; }  // 4 of 5
  bool pass() const { return case2_contains >= needed() && case3_contains >= needed() && narrower >= needed(); }

  std::string text() const {
    std::ostringstream out;
    for (std::size_t s = 0; s < cases[0].size(); ++s) {
      out << "seed " << cases[0][s].seed << "\n";
      out << detail::interval_table({&cases[0][s], &cases[1][s], &cases[2][s]}, {"Case 1", "Case 2", "Case 3"})
          << "\n";
    }
    out << detail::pass_line(case2_contains >= needed(), "case 2 intervals contain every true value", case2_contains,
                             seeds())
        << '\n'
        << detail::pass_line(case3_contains >= needed(), "case 3 intervals contain every true value", case3_contains,
                             seeds())
        << '\n'
        << detail::pass_line(narrower >= needed(), "case 3 cohort interval narrower than case 1", narrower, seeds())
        << '\n';
    return out.str();
  }
};

inline Experiment1Report run_experiment1(const ReplicateOptions& opt) {
  Experiment1Report rep;
  for (int c = 1; c <= 3; ++c)
    for (auto seed : opt.seeds) rep.cases[static_cast<std::size_t>(c - 1)].push_back(run_setup(experiment1_config(c), seed, opt));
  for (std::size_t s = 0; s < opt.seeds.size(); ++s) {
    rep.case2_contains += rep.cases[1][s].all_contain();
    rep.case3_contains += rep.cases[2][s].all_contain();
    rep.narrower += rep.cases[2][s].interval("beta0", "cohort").width() <
                    rep.cases[0][s].interval("beta0", "cohort").width();
  }
  return rep;
}

struct Experiment2Report {
  std::vector<ChainReport> well, mis;
  long well_contains = 0, mis_age_excludes = 0, mis_lambda_above = 0, mis_both = 0;

  long seeds() const { return static_cast<long>(well.size()); }
  long needed() const { return seeds() - seeds() / 5; }
  bool pass() const { return well_contains >= needed() && mis_both >= needed(); }

  std::string text() const {
    std::ostringstream out;
    for (std::size_t s = 0; s < well.size(); ++s) {
      out << "seed " << well[s].seed << "\n";
      out << detail::interval_table({&well[s], &mis[s]}, {"Well-specified", "Misspecified"}) << "\n";
    }
    out << detail::pass_line(well_contains >= needed(), "well-specified intervals contain every true value",
                             well_contains, seeds())
        << '\n'
        << detail::pass_line(mis_age_excludes >= needed(), "misspecified age interval excludes 1", mis_age_excludes,
                             seeds())
        << '\n'
        << detail::pass_line(mis_lambda_above >= needed(), "misspecified lambda intercept interval above -2",
                             mis_lambda_above, seeds())
        << '\n'
        << detail::pass_line(mis_both >= needed(), "misspecified arm shows both distortions", mis_both, seeds())
        << '\n';
    return out.str();
  }
};

inline Experiment2Report run_experiment2(const ReplicateOptions& opt) {
  Experiment2Report rep;
  for (auto seed : opt.seeds) {
    rep.well.push_back(run_setup(experiment2_config(Specification::well), seed, opt));
    rep.mis.push_back(run_setup(experiment2_config(Specification::mis), seed, opt));
  }
  for (std::size_t s = 0; s < rep.well.size(); ++s) {
    rep.well_contains += rep.well[s].all_contain();
    const auto& age = rep.mis[s].interval("beta0", "age");
    const auto& lam = rep.mis[s].interval("eta0", "(Intercept)");
    const bool excludes = !(age.lo <= 1.0 && 1.0 <= age.hi);
    const bool above = lam.lo > -2.0;
    rep.mis_age_excludes += excludes;
    rep.mis_lambda_above += above;
    rep.mis_both += excludes && above;
  }
  return rep;
}

}  // namespace mstrace
