#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace mstrace {

/// Probabilities are clamped to [kProbFloor, 1 - kProbFloor] before taking logs.
inline constexpr double kProbFloor = 1e-12;

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double clamp_probability(double p) {
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

/// Bernoulli log-mass with the probability clamped away from {0, 1}.
inline double bernoulli_log_mass(int y, double p) {
  const double q = clamp_probability(p);
  return y ? std::log(q) : std::log1p(-q);
}

/// Softmax over a vector of linear predictors, stabilised by the max.
inline std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> out(scores.begin(), scores.end());
  if (out.empty()) return out;
  const double top = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace mstrace
