#pragma once

// Weighted logistic-regression likelihoods on aggregated binomial rows.
//
// The Bernoulli log-likelihood of any block (transitions from state 0,
// transitions from state 1, or public-state emissions) only depends on the
// data through the weighted trial and success counts of each distinct design
// row, so cells sharing a row are pooled before optimisation and sampling.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "mstrace/error.hpp"
#include "mstrace/features.hpp"
#include "mstrace/model.hpp"
#include "mstrace/numeric.hpp"

namespace mstrace {

/// logit(1 - kProbFloor): linear predictors are clamped here, which is the
/// same as clamping probabilities to [kProbFloor, 1 - kProbFloor].
inline const double kEtaClamp = std::log1p(-kProbFloor) - std::log(kProbFloor);

struct BinomialRows {
  RowMatrix design;
  Eigen::VectorXd trials;
  Eigen::VectorXd successes;

  Eigen::Index size() const { return design.rows(); }
};

inline double binomial_log_likelihood(const BinomialRows& rows, const Eigen::VectorXd& beta) {
  if (beta.size() != rows.design.cols()) throw ValidationError("coefficient length differs from design width");
  const Eigen::ArrayXd eta = (rows.design * beta).array().min(kEtaClamp).max(-kEtaClamp);
  const Eigen::ArrayXd sp = eta.max(0.0) + (1.0 + (-eta.abs()).exp()).log();
  return (rows.successes.array() * eta - rows.trials.array() * sp).sum();
}

/// Deduplicated design rows of one block, with the row id of every cell.
class RowIndex {
 public:
  RowIndex() = default;
  explicit RowIndex(const DesignMatrix& dm) {
    const auto p = static_cast<std::size_t>(dm.rows.cols());
    const std::size_t cells = static_cast<std::size_t>(dm.rows.rows());
    std::unordered_map<std::string, std::uint32_t> lookup;
    lookup.reserve(cells);
    cell_rows_.resize(cells);
    std::vector<std::size_t> first_cell;
    std::string key(p * sizeof(double), '\0');
    for (std::size_t c = 0; c < cells; ++c) {
      std::memcpy(key.data(), dm.rows.data() + c * p, p * sizeof(double));
      const auto [it, inserted] = lookup.try_emplace(key, static_cast<std::uint32_t>(first_cell.size()));
      if (inserted) first_cell.push_back(c);
      cell_rows_[c] = it->second;
    }
    unique_.resize(static_cast<Eigen::Index>(first_cell.size()), static_cast<Eigen::Index>(p));
    for (std::size_t u = 0; u < first_cell.size(); ++u)
      unique_.row(static_cast<Eigen::Index>(u)) = dm.rows.row(static_cast<Eigen::Index>(first_cell[u]));
  }

  const RowMatrix& unique_rows() const { return unique_; }
  std::span<const std::uint32_t> cell_rows() const { return cell_rows_; }
  std::size_t size() const { return static_cast<std::size_t>(unique_.rows()); }

  /// Keeps rows with positive trials.
  BinomialRows gather(std::span<const double> trials, std::span<const double> successes) const {
    std::vector<Eigen::Index> keep;
    for (std::size_t u = 0; u < trials.size(); ++u)
      if (trials[u] > 0.0) keep.push_back(static_cast<Eigen::Index>(u));
    BinomialRows out;
    out.design.resize(static_cast<Eigen::Index>(keep.size()), unique_.cols());
    out.trials.resize(static_cast<Eigen::Index>(keep.size()));
    out.successes.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const auto ki = static_cast<Eigen::Index>(k);
      out.design.row(ki) = unique_.row(keep[k]);
      out.trials[ki] = trials[static_cast<std::size_t>(keep[k])];
      out.successes[ki] = successes[static_cast<std::size_t>(keep[k])];
    }
    return out;
  }

 private:
  RowMatrix unique_;
  std::vector<std::uint32_t> cell_rows_;
};

/// Pools the cells that enter a block's likelihood along complete paths.
/// beta0: cells in state 0 with a successor, success = moved to 1.
/// beta1: cells in state 1 with a successor, success = moved to 0.
/// eta0: cells in state 0, success = trace.
inline BinomialRows collect_block_rows(Block block, std::span<const std::uint8_t> paths, const Designs& d,
                                       const RowIndex& index, std::span<const double> weights = {}) {
  std::vector<double> trials(index.size(), 0.0), successes(index.size(), 0.0);
  const auto rows = index.cell_rows();
  for (std::size_t i = 0; i + 1 < d.offsets.size(); ++i) {
    const std::size_t begin = d.offsets[i], end = d.offsets[i + 1];
    if (block == Block::eta0) {
      for (std::size_t c = begin; c < end; ++c) {
        if (paths[c] != kPublic) continue;
        const double w = weights.empty() ? 1.0 : weights[c];
        trials[rows[c]] += w;
        successes[rows[c]] += w * d.traces[c];
      }
    } else {
      const std::uint8_t from = block == Block::beta0 ? kPublic : kPrivate;
      for (std::size_t c = begin; c + 1 < end; ++c) {
        if (paths[c] != from) continue;
        const double w = weights.empty() ? 1.0 : weights[c];
        trials[rows[c]] += w;
        successes[rows[c]] += w * (paths[c + 1] != from ? 1.0 : 0.0);
      }
    }
  }
  return index.gather(trials, successes);
}

struct MleOptions {
  double gradient_tolerance = 1e-8;
  int max_iterations = 100;
  /// Fitted linear predictors beyond this magnitude signal separation.
  double separation_eta = 20.0;
};

struct MleResult {
  Eigen::VectorXd mu_hat;
  /// Inverse observed information at mu_hat.
  Eigen::MatrixXd sigma_hat;
  int iterations = 0;
  double log_likelihood = 0.0;
};

namespace detail {
struct NewtonTerms {
  Eigen::VectorXd gradient;
  Eigen::MatrixXd information;
};

inline NewtonTerms newton_terms(const BinomialRows& rows, const Eigen::VectorXd& beta) {
  const Eigen::ArrayXd eta = (rows.design * beta).array();
  const Eigen::ArrayXd p = eta.unaryExpr([](double v) { return logistic(v); });
  const Eigen::VectorXd resid = (rows.successes.array() - rows.trials.array() * p).matrix();
  const Eigen::ArrayXd curv = rows.trials.array() * p * (1.0 - p);
  NewtonTerms t;
  t.gradient = rows.design.transpose() * resid;
  t.information = rows.design.transpose() * (curv.matrix().asDiagonal() * rows.design);
  return t;
}
}  // namespace detail

/// Newton-Raphson maximisation of the weighted Bernoulli log-likelihood with
/// step halving. Throws NumericalError on empty data, singular information,
/// separation, or non-convergence.
inline MleResult glm_mle(const BinomialRows& rows, const Eigen::VectorXd& start, const MleOptions& opt = {}) {
  const Eigen::Index p = rows.design.cols();
  if (start.size() != p) throw ValidationError("MLE start vector has wrong length");
  if (rows.size() == 0 || rows.trials.sum() <= 0.0) throw NumericalError("MLE: block has no observations");
  Eigen::VectorXd beta = start.allFinite() ? start : Eigen::VectorXd::Zero(p);
  double ll = binomial_log_likelihood(rows, beta);
  MleResult out;
  bool converged = false;
  for (int it = 0; it <= opt.max_iterations; ++it) {
    const auto terms = detail::newton_terms(rows, beta);
    out.iterations = it;
    if (terms.gradient.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance) {
      converged = true;
      break;
    }
    if (it == opt.max_iterations) break;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(terms.information);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0.0).any())
      throw NumericalError("MLE: singular information matrix (collinear design or separation)");
    const Eigen::VectorXd step = ldlt.solve(terms.gradient);
    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    double next_ll = binomial_log_likelihood(rows, next);
    while (!(next_ll >= ll - 1e-12 * std::abs(ll)) && scale > 1e-10) {
      scale *= 0.5;
      next = beta + scale * step;
      next_ll = binomial_log_likelihood(rows, next);
    }
    const double moved = (scale * step).lpNorm<Eigen::Infinity>();
    beta = next;
    ll = next_ll;
    if ((rows.design * beta).cwiseAbs().maxCoeff() > opt.separation_eta)
      throw NumericalError("MLE: separation detected (fitted probabilities at 0 or 1)");
    if (moved < 1e-14 * (1.0 + beta.lpNorm<Eigen::Infinity>())) {
      // Gradient sits at the floating-point floor of the data scale.
      converged = terms.gradient.lpNorm<Eigen::Infinity>() < 1e-6 * (1.0 + rows.trials.sum());
      break;
    }
  }
  if (!converged) throw NumericalError("MLE: Newton iterations did not converge");
  if ((rows.design * beta).cwiseAbs().maxCoeff() > opt.separation_eta)
    throw NumericalError("MLE: separation detected (fitted probabilities at 0 or 1)");
  const auto terms = detail::newton_terms(rows, beta);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(terms.information);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0.0).any())
    throw NumericalError("MLE: singular information matrix at the optimum");
  Eigen::MatrixXd sigma = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  out.sigma_hat = 0.5 * (sigma + sigma.transpose());
  out.mu_hat = beta;
  out.log_likelihood = binomial_log_likelihood(rows, beta);
  return out;
}

/// MLE of one block given complete flattened paths.
inline MleResult glm_mle(Block block, std::span<const std::uint8_t> paths, const Designs& d,
                         std::span<const double> weights, const Eigen::VectorXd& start, const MleOptions& opt = {}) {
  const RowIndex index(d.block(block));
  return glm_mle(collect_block_rows(block, paths, d, index, weights), start, opt);
}

}  // namespace mstrace
