#pragma once

#include <cmath>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "mstrace/error.hpp"
#include "mstrace/rng.hpp"
#include "mstrace/text.hpp"

namespace mstrace {

/// Independent priors on every coefficient of a block.
struct Prior {
  enum class Kind { flat, gaussian };
  Kind kind = Kind::flat;
  double sigma = 5.0;

  static Prior flat() { return {}; }
  static Prior gaussian(double sigma) {
    if (!(sigma > 0.0)) throw ValidationError("gaussian prior requires sigma > 0");
    return {Kind::gaussian, sigma};
  }

  double log_density(const Eigen::VectorXd& beta) const {
    return kind == Kind::flat ? 0.0 : -0.5 * beta.squaredNorm() / (sigma * sigma);
  }

  std::string describe() const { return kind == Kind::flat ? "flat" : "gaussian:" + format_double(sigma); }

  friend bool operator==(const Prior&, const Prior&) = default;
};

struct MetropolisResult {
  Eigen::VectorXd state;
  int accepted = 0;
  int proposed = 0;
};

/// Lower Cholesky factor of tau^2 * sigma_hat, retrying once with 1e-8 jitter.
inline Eigen::MatrixXd proposal_factor(const Eigen::MatrixXd& sigma_hat, double tau) {
  if (sigma_hat.rows() != sigma_hat.cols()) throw NumericalError("proposal covariance must be square");
  Eigen::LLT<Eigen::MatrixXd> llt(sigma_hat);
  if (llt.info() != Eigen::Success) {
    llt.compute(sigma_hat + 1e-8 * Eigen::MatrixXd::Identity(sigma_hat.rows(), sigma_hat.cols()));
    if (llt.info() != Eigen::Success) throw NumericalError("proposal covariance is not positive definite");
  }
  return tau * Eigen::MatrixXd(llt.matrixL());
}

/// Runs `steps` random-walk Metropolis steps with proposals
/// N(current, tau^2 sigma_hat) targeting exp(log_lik) * prior, and returns
/// the final state. `log_lik` maps a coefficient vector to a log-likelihood.
template <class LogLik>
MetropolisResult metropolis_block_update(const Eigen::VectorXd& mu, LogLik&& log_lik, const Prior& prior,
                                         const Eigen::MatrixXd& sigma_hat, double tau, int steps, Rng& rng) {
  if (steps < 0) throw ValidationError("number of Metropolis steps must be nonnegative");
  MetropolisResult out{mu, 0, 0};
  if (steps == 0) return out;
  if (sigma_hat.rows() != mu.size()) throw ValidationError("proposal covariance has wrong dimension");
  const Eigen::MatrixXd chol = proposal_factor(sigma_hat, tau);
  std::normal_distribution<double> normal(0.0, 1.0);
  double current = log_lik(out.state) + prior.log_density(out.state);
  Eigen::VectorXd z(mu.size());
  for (int s = 0; s < steps; ++s) {
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = normal(rng);
    const Eigen::VectorXd candidate = out.state + chol * z;
    const double proposed = log_lik(candidate) + prior.log_density(candidate);
    ++out.proposed;
    const double u = uniform01(rng);
    if (std::log(u) < proposed - current) {
      out.state = candidate;
      current = proposed;
      ++out.accepted;
    }
  }
  return out;
}

}  // namespace mstrace
