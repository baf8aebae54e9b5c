#pragma once

// Synthetic panels from parametric data-generating processes.
//
// Each of gamma0, gamma1 and lambda is logistic of a linear predictor written
// as (term, coefficient) pairs in the design term grammar. Available
// covariates are "cohort" (drawn once per individual from U[0, 1]) and "age"
// (t / span_length); trace terms read the traces generated so far. No
// membership trace exists here, so no trace is zeroed.

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mstrace/error.hpp"
#include "mstrace/features.hpp"
#include "mstrace/panel.hpp"
#include "mstrace/rng.hpp"
#include "mstrace/sampler.hpp"

namespace mstrace {

using LinearPredictor = std::vector<std::pair<std::string, double>>;

enum class ObservationMode { individuals, cells };

struct SyntheticDGP {
  long n_individuals = 200;
  long span_length = 60;
  /// Number of individuals (or cells) with observed states; overrides
  /// observed_fraction when set.
  std::optional<long> observed_count;
  double observed_fraction = 1.0;
  ObservationMode observation = ObservationMode::individuals;
  std::uint8_t initial_state = kPublic;
  LinearPredictor gamma0{{"1", -4.0}};
  LinearPredictor gamma1{{"1", -4.0}};
  LinearPredictor lambda{{"1", -1.5}};
  std::uint64_t seed = 1;

  const LinearPredictor& predictor(Block b) const { return b == Block::beta0 ? gamma0 : b == Block::beta1 ? gamma1 : lambda; }
  LinearPredictor& predictor(Block b) { return b == Block::beta0 ? gamma0 : b == Block::beta1 ? gamma1 : lambda; }

  void validate() const {
    if (n_individuals <= 0) throw ValidationError("dgp.n_individuals must be positive");
    if (span_length < 2) throw ValidationError("dgp.span_length must be at least 2");
    if (!(observed_fraction >= 0.0 && observed_fraction <= 1.0))
      throw ValidationError("dgp.observed_fraction must lie in [0, 1]");
    const long units = observation == ObservationMode::individuals ? n_individuals : n_individuals * span_length;
    if (observed_count && (*observed_count < 0 || *observed_count > units))
      throw ValidationError("dgp.observed_count must lie in [0, " + std::to_string(units) + "]");
    if (initial_state > 1) throw ValidationError("dgp.initial_state must be 0 or 1");
    for (Block b : kBlocks) {
      if (predictor(b).empty()) throw ValidationError(std::string("dgp.") + block_name(b) + ": empty linear predictor");
      for (const auto& [term, coef] : predictor(b)) {
        const Term t = parse_term(term);
        if (t.width() != 1)
          throw ValidationError("dgp term '" + term + "' expands to several columns; use scalar terms");
        if (b != Block::eta0 && t.uses_traces())
          throw ValidationError("dgp term '" + term + "' reads traces; only lambda may");
        if (!std::isfinite(coef)) throw ValidationError("dgp term '" + term + "' has a non-finite coefficient");
      }
    }
  }

  long observed_units() const {
    if (observed_count) return *observed_count;
    const long units = observation == ObservationMode::individuals ? n_individuals : n_individuals * span_length;
    return std::lround(observed_fraction * static_cast<double>(units));
  }
};

inline const std::vector<std::string>& synthetic_covariates() {
  static const std::vector<std::string> names{"cohort", "age"};
  return names;
}

struct SimulatedPanel {
  /// What the sampler sees: masked states, all traces, covariates.
  PanelData panel;
  /// Full state paths, indexed like panel.individuals. Never handed to a fit.
  std::vector<std::vector<std::uint8_t>> true_states;
};

namespace detail {
struct CompiledPredictor {
  std::vector<Term> terms;
  std::vector<double> coefs;
};

inline CompiledPredictor compile(const LinearPredictor& lp) {
  CompiledPredictor c;
  for (const auto& [term, coef] : lp) {
    c.terms.push_back(parse_term(term));
    c.coefs.push_back(coef);
  }
  return c;
}
}  // namespace detail

inline SimulatedPanel simulate_panel(const SyntheticDGP& dgp) {
  dgp.validate();
  std::array<detail::CompiledPredictor, 3> lp{detail::compile(dgp.gamma0), detail::compile(dgp.gamma1),
                                              detail::compile(dgp.lambda)};
  const auto& names = synthetic_covariates();
  std::vector<double> phis;
  for (const auto& term : lp[2].terms)
    for (const auto& f : term.factors)
      if (f.kind == FactorKind::decay && f.phi != 1.0 && std::find(phis.begin(), phis.end(), f.phi) == phis.end())
        phis.push_back(f.phi);
  std::array<TermEvaluator, 3> evals{TermEvaluator(lp[0].terms, names), TermEvaluator(lp[1].terms, names),
                                     TermEvaluator(lp[2].terms, names)};
  const std::vector<long> elections = default_election_points();

  SimulatedPanel out;
  out.panel.covariate_names = names;
  const auto n = static_cast<std::size_t>(dgp.n_individuals);
  const auto span = static_cast<std::size_t>(dgp.span_length);
  out.panel.individuals.resize(n);
  out.true_states.resize(n);
  const int width = static_cast<int>(std::to_string(dgp.n_individuals).size());

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = derive_stream(dgp.seed, StreamTag::simulation, i);
    auto& rec = out.panel.individuals[i];
    std::string id = std::to_string(i + 1);
    rec.id = "s" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    rec.t_min = 1;
    rec.covariates.assign(2, std::vector<double>(span));
    rec.traces.resize(span);
    auto& x = out.true_states[i];
    x.resize(span);
    const double cohort = uniform01(rng);
    TraceHistory history(phis);
    std::array<double, 2> cov{};
    std::vector<double> buf;
    auto prob = [&](std::size_t k, const CellContext& ctx) {
      buf.resize(lp[k].coefs.size());
      evals[k].evaluate(ctx, buf);
      double eta = 0.0;
      for (std::size_t j = 0; j < buf.size(); ++j) eta += lp[k].coefs[j] * buf[j];
      const double p = logistic(eta);
      if (!(p > 0.0 && p < 1.0))
        throw ValidationError(std::string("dgp ") + block_name(static_cast<Block>(k)) +
                              " probability leaves (0, 1)" + at_cell(ctx.id, ctx.t));
      return p;
    };
    for (std::size_t o = 0; o < span; ++o) {
      const long t = static_cast<long>(o) + 1;
      cov = {cohort, static_cast<double>(t) / static_cast<double>(dgp.span_length)};
      rec.covariates[0][o] = cov[0];
      rec.covariates[1][o] = cov[1];
      const CellContext ctx{rec.id, t, cov, &history, &elections};
      if (o == 0) {
        x[o] = dgp.initial_state;
      } else {
        // Transition fields at t-1 govern the move into t.
        const double cov_prev[2] = {cohort, static_cast<double>(t - 1) / static_cast<double>(dgp.span_length)};
        const CellContext prev{rec.id, t - 1, cov_prev, &history, &elections};
        const double move = x[o - 1] == kPublic ? prob(0, prev) : prob(1, prev);
        x[o] = uniform01(rng) < move ? static_cast<std::uint8_t>(1 - x[o - 1]) : x[o - 1];
      }
      std::uint8_t y = 0;
      const double lam = prob(2, ctx);
      if (uniform01(rng) < lam && x[o] == kPublic) y = 1;
      rec.traces[o] = y;
      history.push(y);
    }
    rec.states.assign(span, StateCell{});
  }

  // Observation mask.
  Rng mask_rng = derive_stream(dgp.seed, StreamTag::observation_mask);
  const long observed = dgp.observed_units();
  if (dgp.observation == ObservationMode::individuals) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), mask_rng);
    for (long k = 0; k < observed; ++k) {
      const std::size_t i = order[static_cast<std::size_t>(k)];
      for (std::size_t o = 0; o < span; ++o) out.panel.individuals[i].states[o] = out.true_states[i][o];
    }
  } else {
    std::vector<std::size_t> order(n * span);
    for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
    std::shuffle(order.begin(), order.end(), mask_rng);
    for (long k = 0; k < observed; ++k) {
      const std::size_t c = order[static_cast<std::size_t>(k)];
      out.panel.individuals[c / span].states[c % span] = out.true_states[c / span][c % span];
    }
  }
  out.panel.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Experiment presets

/// A complete synthetic experiment: generator, fitted design, sampler
/// settings and the true coefficients aligned with the design columns.
/// Truth entries are absent for columns with no generating counterpart.
struct ExperimentSetup {
  std::string label;
  SyntheticDGP dgp;
  DesignConfig design;
  SamplerConfig sampler;
  std::array<std::vector<std::optional<double>>, 3> truth;
};

inline ExperimentSetup experiment1_config(int which) {
  static constexpr std::array<std::array<long, 2>, 3> sizes{{{200, 200}, {500, 500}, {1000, 200}}};
  if (which < 1 || which > 3) throw ValidationError("experiment 1 has cases 1, 2 and 3");
  ExperimentSetup e;
  e.label = "case " + std::to_string(which);
  e.dgp.n_individuals = sizes[static_cast<std::size_t>(which - 1)][0];
  e.dgp.observed_count = sizes[static_cast<std::size_t>(which - 1)][1];
  e.dgp.gamma0 = {{"1", -4.0}, {"cohort", 1.0}};
  e.dgp.gamma1 = {{"1", -4.0}};
  e.dgp.lambda = {{"1", -1.5}};
  e.design.beta0 = {"1", "cohort"};
  e.design.beta1 = {"1"};
  e.design.eta0 = {"1"};
  e.design.zero_first_trace = false;
  e.truth = {{{-4.0, 1.0}, {-4.0}, {-1.5}}};
  return e;
}

enum class Specification { well, mis };

inline ExperimentSetup experiment2_config(Specification spec) {
  ExperimentSetup e;
  e.label = spec == Specification::well ? "well-specified" : "misspecified";
  e.dgp.n_individuals = 2000;
  e.dgp.observed_fraction = 0.3;
  e.dgp.gamma0 = {{"1", -4.0}, {"age", 1.0}};
  e.dgp.gamma1 = {{"1", -4.0}};
  e.dgp.lambda = {{"1", -2.0}, {"A(0.8)", 2.5}};
  e.design.beta0 = {"1", "age"};
  e.design.beta1 = {"1"};
  e.design.eta0 = spec == Specification::well ? std::vector<std::string>{"1", "A(0.8)"} : std::vector<std::string>{"1"};
  e.design.zero_first_trace = false;
  e.truth = {{{-4.0, 1.0}, {-4.0}, {-2.0}}};
  if (spec == Specification::well) e.truth[2].push_back(2.5);
  return e;
}

inline Specification specification_from_name(std::string_view s) {
  if (s == "well") return Specification::well;
  if (s == "mis") return Specification::mis;
  throw ValidationError("specification must be 'well' or 'mis'");
}

}  // namespace mstrace
