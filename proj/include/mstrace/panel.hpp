#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mstrace/error.hpp"

namespace mstrace {

/// Career states. Public-sector occupancy emits traces; private does not.
inline constexpr std::uint8_t kPublic = 0;
inline constexpr std::uint8_t kPrivate = 1;

/// A possibly-missing state observation.
using StateCell = std::optional<std::uint8_t>;

/// One individual's record on its span [t_min, t_max]. Time is an integer
/// index; one unit is one six-month period.
struct IndividualRecord {
  std::string id;
  long t_min = 1;
  std::vector<StateCell> states;
  std::vector<std::uint8_t> traces;
  /// Indexed [covariate column][offset from t_min].
  std::vector<std::vector<double>> covariates;

  std::size_t length() const { return traces.size(); }
  long t_max() const { return t_min + static_cast<long>(length()) - 1; }

  bool fully_observed() const {
    for (const auto& s : states)
      if (!s) return false;
    return true;
  }
  bool any_observed() const {
    for (const auto& s : states)
      if (s) return true;
    return false;
  }

  friend bool operator==(const IndividualRecord&, const IndividualRecord&) = default;
};

struct PanelData {
  std::vector<std::string> covariate_names;
  std::vector<IndividualRecord> individuals;

  std::optional<std::size_t> covariate_column(std::string_view name) const {
    for (std::size_t k = 0; k < covariate_names.size(); ++k)
      if (covariate_names[k] == name) return k;
    return std::nullopt;
  }

  const IndividualRecord* find(std::string_view id) const {
    for (const auto& rec : individuals)
      if (rec.id == id) return &rec;
    return nullptr;
  }

  std::size_t total_cells() const {
    std::size_t n = 0;
    for (const auto& rec : individuals) n += rec.length();
    return n;
  }

  /// Checks every structural invariant; throws ValidationError naming the
  /// offending individual and time index.
  void validate() const {
    std::set<std::string_view> names(covariate_names.begin(), covariate_names.end());
    if (names.size() != covariate_names.size())
      throw ValidationError("duplicate covariate column names");
    std::unordered_set<std::string_view> seen;
    for (const auto& rec : individuals) {
      if (rec.id.empty()) throw ValidationError("empty individual id");
      if (!seen.insert(rec.id).second)
        throw ValidationError("duplicate individual id '" + rec.id + "'");
      if (rec.length() == 0)
        throw ValidationError("empty span" + at_cell(rec.id, rec.t_min));
      if (rec.states.size() != rec.length())
        throw ValidationError("state array length differs from span" + at_cell(rec.id, rec.t_min));
      if (rec.covariates.size() != covariate_names.size())
        throw ValidationError("covariate column count mismatch" + at_cell(rec.id, rec.t_min));
      for (std::size_t k = 0; k < rec.covariates.size(); ++k) {
        if (rec.covariates[k].size() != rec.length())
          throw ValidationError("covariate '" + covariate_names[k] + "' length differs from span" +
                                at_cell(rec.id, rec.t_min));
        for (std::size_t o = 0; o < rec.length(); ++o)
          if (!std::isfinite(rec.covariates[k][o]))
            throw ValidationError("non-finite covariate '" + covariate_names[k] + "'" +
                                  at_cell(rec.id, rec.t_min + static_cast<long>(o)));
      }
      for (std::size_t o = 0; o < rec.length(); ++o) {
        const long t = rec.t_min + static_cast<long>(o);
        if (rec.traces[o] > 1) throw ValidationError("trace must be 0 or 1" + at_cell(rec.id, t));
        if (rec.states[o] && *rec.states[o] > 1)
          throw ValidationError("state must be 0, 1 or missing" + at_cell(rec.id, t));
        if (rec.states[o] == kPrivate && rec.traces[o] == 1)
          throw ValidationError("private state with a trace violates the deterministic emission" +
                                at_cell(rec.id, t));
      }
    }
  }

  friend bool operator==(const PanelData&, const PanelData&) = default;
};

/// Flattened cell offsets: individual i owns cells [offsets[i], offsets[i+1]).
inline std::vector<std::size_t> cell_offsets(const PanelData& panel) {
  std::vector<std::size_t> offsets(panel.individuals.size() + 1, 0);
  for (std::size_t i = 0; i < panel.individuals.size(); ++i)
    offsets[i + 1] = offsets[i] + panel.individuals[i].length();
  return offsets;
}

/// Copy of `panel` with every state of the listed individuals set missing.
/// Traces and covariates are retained.
inline PanelData mask_states(const PanelData& panel, const std::vector<std::string>& ids) {
  std::unordered_set<std::string_view> wanted(ids.begin(), ids.end());
  PanelData out = panel;
  std::size_t hit = 0;
  for (auto& rec : out.individuals) {
    if (!wanted.count(rec.id)) continue;
    ++hit;
    for (auto& s : rec.states) s.reset();
  }
  if (hit != wanted.size()) throw ValidationError("mask references an unknown individual id");
  return out;
}

}  // namespace mstrace
