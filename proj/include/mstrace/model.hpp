#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mstrace/error.hpp"
#include "mstrace/features.hpp"
#include "mstrace/numeric.hpp"
#include "mstrace/panel.hpp"

namespace mstrace {

/// Coefficients of the binary Markov switching model. beta0 drives the exit
/// probability P(X'=1 | X=0), beta1 the return probability P(X'=0 | X=1),
/// eta0 the trace probability in the public state.
struct ParameterSet {
  Eigen::VectorXd beta0, beta1, eta0;

  Eigen::VectorXd& block(Block b) { return b == Block::beta0 ? beta0 : b == Block::beta1 ? beta1 : eta0; }
  const Eigen::VectorXd& block(Block b) const {
    return b == Block::beta0 ? beta0 : b == Block::beta1 ? beta1 : eta0;
  }

  static ParameterSet zeros(const Designs& d) {
    return {Eigen::VectorXd::Zero(d.block(Block::beta0).rows.cols()),
            Eigen::VectorXd::Zero(d.block(Block::beta1).rows.cols()),
            Eigen::VectorXd::Zero(d.block(Block::eta0).rows.cols())};
  }

  void validate(const Designs& d) const {
    for (Block b : kBlocks) {
      if (block(b).size() != d.block(b).rows.cols())
        throw ValidationError(std::string(block_name(b)) + " has " + std::to_string(block(b).size()) +
                              " coefficients, design has " + std::to_string(d.block(b).rows.cols()) + " columns");
      if (!block(b).allFinite()) throw ValidationError(std::string(block_name(b)) + " has non-finite entries");
    }
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    for (Block k : kBlocks) {
      if (a.block(k).size() != b.block(k).size()) return false;
      if (!(a.block(k).array() == b.block(k).array()).all()) return false;
    }
    return true;
  }
};

namespace detail {
inline double checked_linear_predictor(std::span<const double> w, std::span<const double> coef) {
  if (w.size() != coef.size())
    throw ValidationError("design row has " + std::to_string(w.size()) + " entries but coefficient vector has " +
                          std::to_string(coef.size()));
  for (std::size_t k = 0; k < w.size(); ++k)
    if (!std::isfinite(w[k]) || !std::isfinite(coef[k])) throw ValidationError("non-finite design or coefficient");
  return dot(w, coef);
}
}  // namespace detail

/// logistic(w'beta): the two-state softmax with "stay" as reference category.
inline double transition_probability(std::span<const double> w, std::span<const double> beta) {
  return logistic(detail::checked_linear_predictor(w, beta));
}

/// Trace probability lambda = logistic(w~'eta) in the public state. The
/// private state emits no trace with probability one.
inline double emission_mean(std::span<const double> w_tilde, std::span<const double> eta) {
  return logistic(detail::checked_linear_predictor(w_tilde, eta));
}

inline std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

/// Per-cell gamma0, gamma1 and lambda. The last cell of each span carries a
/// transition value that is never used.
struct ModelFields {
  std::vector<double> gamma0, gamma1, lambda;
};

inline ModelFields compute_fields(const ParameterSet& params, const Designs& d) {
  params.validate(d);
  auto eval = [](const RowMatrix& rows, const Eigen::VectorXd& coef) {
    const Eigen::VectorXd eta = rows * coef;
    std::vector<double> out(static_cast<std::size_t>(eta.size()));
    for (Eigen::Index c = 0; c < eta.size(); ++c) out[static_cast<std::size_t>(c)] = logistic(eta[c]);
    return out;
  };
  return {eval(d.block(Block::beta0).rows, params.beta0), eval(d.block(Block::beta1).rows, params.beta1),
          eval(d.block(Block::eta0).rows, params.eta0)};
}

/// Flattened complete state paths; throws on the first missing cell.
inline std::vector<std::uint8_t> complete_states(const PanelData& panel) {
  std::vector<std::uint8_t> out;
  out.reserve(panel.total_cells());
  for (const auto& rec : panel.individuals)
    for (std::size_t o = 0; o < rec.length(); ++o) {
      if (!rec.states[o])
        throw ValidationError("likelihood requires complete states" + at_cell(rec.id, rec.t_min + static_cast<long>(o)));
      out.push_back(*rec.states[o]);
    }
  return out;
}

namespace detail {
inline double weight_at(std::span<const double> weights, std::size_t c) {
  return weights.empty() ? 1.0 : weights[c];
}
inline void check_weights(std::span<const double> weights, std::size_t cells) {
  if (!weights.empty() && weights.size() != cells)
    throw ValidationError("weights must have one entry per cell");
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("weights must be finite and nonnegative");
}
}  // namespace detail

/// Transition log-likelihood for the chains leaving `from` (0 or 1) along
/// complete flattened paths. Term (i, t) is weighted by weights[cell(i, t)].
inline double transition_log_likelihood_from(std::uint8_t from, const Eigen::VectorXd& beta,
                                             std::span<const std::uint8_t> paths, const Designs& d,
                                             std::span<const double> weights = {}) {
  const DesignMatrix& dm = d.block(from == kPublic ? Block::beta0 : Block::beta1);
  if (beta.size() != dm.rows.cols()) throw ValidationError("coefficient length differs from transition design width");
  detail::check_weights(weights, d.cells());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < d.offsets.size(); ++i) {
    double partial = 0.0;
    for (std::size_t c = d.offsets[i]; c + 1 < d.offsets[i + 1]; ++c) {
      if (paths[c] != from) continue;
      const double p = logistic(dm.rows.row(static_cast<Eigen::Index>(c)).dot(beta));
      const int moved = paths[c + 1] != from;
      partial += detail::weight_at(weights, c) * bernoulli_log_mass(moved, p);
    }
    total += partial;
  }
  return total;
}

inline double transition_log_likelihood(const ParameterSet& params, std::span<const std::uint8_t> paths,
                                        const Designs& d, std::span<const double> weights = {}) {
  return transition_log_likelihood_from(kPublic, params.beta0, paths, d, weights) +
         transition_log_likelihood_from(kPrivate, params.beta1, paths, d, weights);
}

inline double transition_log_likelihood(const ParameterSet& params, const PanelData& panel, const Designs& d,
                                        std::span<const double> weights = {}) {
  return transition_log_likelihood(params, complete_states(panel), d, weights);
}

/// Emission log-likelihood over public-state cells. Private cells contribute
/// zero; a private cell with a trace is an error.
inline double emission_log_likelihood(const Eigen::VectorXd& eta, std::span<const std::uint8_t> paths,
                                      const Designs& d, std::span<const double> weights = {},
                                      const PanelData* panel = nullptr) {
  const DesignMatrix& dm = d.block(Block::eta0);
  if (eta.size() != dm.rows.cols()) throw ValidationError("coefficient length differs from emission design width");
  detail::check_weights(weights, d.cells());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < d.offsets.size(); ++i) {
    double partial = 0.0;
    for (std::size_t c = d.offsets[i]; c < d.offsets[i + 1]; ++c) {
      if (paths[c] == kPrivate) {
        if (d.traces[c]) {
          std::string where;
          if (panel) {
            const auto& rec = panel->individuals[i];
            where = at_cell(rec.id, rec.t_min + static_cast<long>(c - d.offsets[i]));
          }
          throw ValidationError("private state with a trace has zero likelihood" + where);
        }
        continue;
      }
      const double lambda = logistic(dm.rows.row(static_cast<Eigen::Index>(c)).dot(eta));
      partial += detail::weight_at(weights, c) * bernoulli_log_mass(d.traces[c], lambda);
    }
    total += partial;
  }
  return total;
}

inline double emission_log_likelihood(const Eigen::VectorXd& eta, const PanelData& panel, const Designs& d,
                                      std::span<const double> weights = {}) {
  return emission_log_likelihood(eta, complete_states(panel), d, weights, &panel);
}

}  // namespace mstrace
