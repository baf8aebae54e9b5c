#pragma once

// Hold-out reconstruction loss: withhold the observed states of a random
// subset of individuals, fit on the rest (their traces stay in), and score the
// trailing-window imputation frequencies against the withheld states.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "mstrace/diagnostics.hpp"
#include "mstrace/error.hpp"
#include "mstrace/panel.hpp"
#include "mstrace/rng.hpp"
#include "mstrace/sampler.hpp"

namespace mstrace {

struct HoldoutPlan {
  std::vector<std::string> excluded;
  std::uint64_t seed = 0;

  void validate(const PanelData& panel) const {
    std::unordered_set<std::string_view> seen;
    for (const auto& id : excluded) {
      if (!seen.insert(id).second) throw ValidationError("hold-out lists individual '" + id + "' twice");
      const auto* rec = panel.find(id);
      if (!rec) throw ValidationError("hold-out individual '" + id + "' is not in the panel");
      if (!rec->any_observed()) throw ValidationError("hold-out individual '" + id + "' has no observed state");
    }
  }
};

/// Random fraction of the individuals having at least one observed state.
inline HoldoutPlan make_holdout_plan(const PanelData& panel, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("hold-out fraction must lie in (0, 1)");
  std::vector<std::string> candidates;
  for (const auto& rec : panel.individuals)
    if (rec.any_observed()) candidates.push_back(rec.id);
  Rng rng = derive_stream(seed, StreamTag::holdout);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  const auto k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(candidates.size())));
  candidates.resize(k);
  return {std::move(candidates), seed};
}

struct CellLoss {
  std::string id;
  long t = 0;
  int observed = 0;
  double predicted = 0.0;
  double loss = 0.0;
};

struct LossReport {
  std::string model;
  std::vector<CellLoss> cells;

  /// Empty when nothing was held out.
  std::optional<double> mean() const {
    if (cells.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& c : cells) s += c.loss;
    return s / static_cast<double>(cells.size());
  }
};

/// Scores the predictions of a finished chain on the plan's withheld cells.
/// `original` is the panel before masking; cells line up with the chain's.
inline LossReport score_holdout(const PanelData& original, const HoldoutPlan& plan, const PosteriorDraws& draws,
                                long window) {
  LossReport report;
  if (plan.excluded.empty()) return report;
  const auto preds = reconstruction_predictions(draws, window);
  const auto offsets = cell_offsets(original);
  const std::unordered_set<std::string_view> held(plan.excluded.begin(), plan.excluded.end());
  for (std::size_t i = 0; i < original.individuals.size(); ++i) {
    const auto& rec = original.individuals[i];
    if (!held.count(rec.id)) continue;
    for (std::size_t o = 0; o < rec.length(); ++o) {
      if (!rec.states[o]) continue;
      const double p = preds[offsets[i] + o];
      const int x = *rec.states[o];
      report.cells.push_back({rec.id, rec.t_min + static_cast<long>(o), x, p, cross_entropy(x, p)});
    }
  }
  return report;
}

/// Masks the plan's individuals, runs the chain, and scores it. With
/// sampler.ignore_traces set this is the no-trace baseline.
inline LossReport holdout_evaluate(const PanelData& panel, const HoldoutPlan& plan, const DesignConfig& design,
                                   const SamplerConfig& sampler) {
  plan.validate(panel);
  LossReport report;
  if (plan.excluded.empty()) return report;
  const PanelData masked = mask_states(panel, plan.excluded);
  const std::unordered_set<std::string_view> held(plan.excluded.begin(), plan.excluded.end());
  for (const auto& rec : masked.individuals)
    if (held.count(rec.id) && rec.any_observed())
      throw Error("hold-out mask leaked states of '" + rec.id + "'");
  const PosteriorDraws draws = run_mcmc(masked, design, sampler);
  return score_holdout(panel, plan, draws, sampler.window);
}

}  // namespace mstrace
