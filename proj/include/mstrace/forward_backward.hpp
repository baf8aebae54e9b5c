#pragma once

// Two-state forward-backward recursions with time-varying transition and
// emission parameters. Transition fields at offset t govern the move from t
// to t+1. State 0 emits Bernoulli(lambda_t) traces; state 1 emits none.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mstrace/error.hpp"
#include "mstrace/rng.hpp"

namespace mstrace {

/// Inputs for one individual's hidden path.
struct PathProblem {
  std::string_view id;
  long t_min = 1;
  std::span<const std::uint8_t> traces;
  /// -1 where the state is missing, otherwise the observed state.
  std::span<const std::int8_t> clamps;
  std::span<const double> gamma0, gamma1, lambda;
  /// P(X = 0) at t_min.
  double initial_public_prob = 1.0;
  /// Drop the emission factor entirely (the no-trace baseline).
  bool ignore_traces = false;

  std::size_t length() const { return traces.size(); }
};

struct SmoothedPosterior {
  /// P(X_t = 1 | traces, observed states, parameters).
  std::vector<double> private_prob;
  /// P(X_t = a, X_{t+1} = b | ...) stored at index 2a + b; one entry per step.
  std::vector<std::array<double, 4>> pairwise;
  /// log P(traces, observed states | parameters).
  double log_likelihood = 0.0;
};

namespace detail {

inline std::array<double, 2> emission_factors(const PathProblem& p, std::size_t t) {
  std::array<double, 2> e{1.0, 1.0};
  if (!p.ignore_traces) {
    const double lam = p.lambda[t];
    e[0] = p.traces[t] ? lam : 1.0 - lam;
    e[1] = p.traces[t] ? 0.0 : 1.0;
  }
  if (p.clamps[t] >= 0) e[1 - p.clamps[t]] = 0.0;
  return e;
}

inline std::array<double, 4> transition_matrix(const PathProblem& p, std::size_t t) {
  return {1.0 - p.gamma0[t], p.gamma0[t], p.gamma1[t], 1.0 - p.gamma1[t]};
}

inline void check_problem(const PathProblem& p) {
  const std::size_t n = p.length();
  if (n == 0 || p.clamps.size() != n || p.gamma0.size() != n || p.gamma1.size() != n ||
      (!p.ignore_traces && p.lambda.size() != n))
    throw ValidationError("path problem arrays must cover the individual's span");
}

/// Scaled forward pass; alpha holds normalised filtered probabilities
/// (2 per step). Returns log P(observations).
inline double forward_pass(const PathProblem& p, std::vector<double>& alpha, std::vector<double>* scales) {
  check_problem(p);
  const std::size_t n = p.length();
  alpha.resize(2 * n);
  if (scales) scales->resize(n);
  double loglik = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto e = emission_factors(p, t);
    double a0, a1;
    if (t == 0) {
      a0 = p.initial_public_prob * e[0];
      a1 = (1.0 - p.initial_public_prob) * e[1];
    } else {
      const auto m = transition_matrix(p, t - 1);
      const double f0 = alpha[2 * (t - 1)], f1 = alpha[2 * (t - 1) + 1];
      a0 = (f0 * m[0] + f1 * m[2]) * e[0];
      a1 = (f0 * m[1] + f1 * m[3]) * e[1];
    }
    const double c = a0 + a1;
    if (!(c > 0.0))
      throw ValidationError("observations have zero probability under the model" +
                            at_cell(p.id, p.t_min + static_cast<long>(t)));
    alpha[2 * t] = a0 / c;
    alpha[2 * t + 1] = a1 / c;
    if (scales) (*scales)[t] = c;
    loglik += std::log(c);
  }
  return loglik;
}

}  // namespace detail

/// Exact smoothed marginals and pairwise posteriors.
inline SmoothedPosterior forward_backward_marginals(const PathProblem& p) {
  std::vector<double> alpha, scales;
  SmoothedPosterior out;
  out.log_likelihood = detail::forward_pass(p, alpha, &scales);
  const std::size_t n = p.length();
  std::vector<double> beta(2 * n, 1.0);
  for (std::size_t t = n - 1; t-- > 0;) {
    const auto m = detail::transition_matrix(p, t);
    const auto e = detail::emission_factors(p, t + 1);
    const double b0 = e[0] * beta[2 * (t + 1)], b1 = e[1] * beta[2 * (t + 1) + 1];
    beta[2 * t] = (m[0] * b0 + m[1] * b1) / scales[t + 1];
    beta[2 * t + 1] = (m[2] * b0 + m[3] * b1) / scales[t + 1];
  }
  out.private_prob.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double g0 = alpha[2 * t] * beta[2 * t], g1 = alpha[2 * t + 1] * beta[2 * t + 1];
    out.private_prob[t] = g1 / (g0 + g1);
  }
  out.pairwise.resize(n - 1);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const auto m = detail::transition_matrix(p, t);
    const auto e = detail::emission_factors(p, t + 1);
    double total = 0.0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        const double v = alpha[2 * t + a] * m[2 * a + b] * e[b] * beta[2 * (t + 1) + b] / scales[t + 1];
        out.pairwise[t][2 * a + b] = v;
        total += v;
      }
    for (double& v : out.pairwise[t]) v /= total;
  }
  return out;
}

/// Forward filtering, backward sampling: writes one draw from the exact
/// conditional P(X | traces, observed states, parameters) into `path`.
/// `alpha` is scratch space that may be reused across calls.
inline void sample_hidden_path(const PathProblem& p, std::span<std::uint8_t> path, Rng& rng,
                               std::vector<double>& alpha) {
  detail::forward_pass(p, alpha, nullptr);
  const std::size_t n = p.length();
  if (path.size() != n) throw ValidationError("path buffer must cover the individual's span");
  path[n - 1] = uniform01(rng) < alpha[2 * (n - 1) + 1] ? 1 : 0;
  for (std::size_t t = n - 1; t-- > 0;) {
    const auto m = detail::transition_matrix(p, t);
    const int next = path[t + 1];
    const double w0 = alpha[2 * t] * m[next], w1 = alpha[2 * t + 1] * m[2 + next];
    const double total = w0 + w1;
    if (!(total > 0.0))
      throw ValidationError("backward sampling reached a zero-probability state" +
                            at_cell(p.id, p.t_min + static_cast<long>(t)));
    path[t] = uniform01(rng) < w1 / total ? 1 : 0;
  }
}

inline std::vector<std::uint8_t> sample_hidden_path(const PathProblem& p, Rng& rng) {
  std::vector<double> alpha;
  std::vector<std::uint8_t> path(p.length());
  sample_hidden_path(p, path, rng, alpha);
  return path;
}

}  // namespace mstrace
