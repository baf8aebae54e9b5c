#pragma once

// Reference implementations used only to check the library. Each one is
// written the slow, obvious way and shares no code with the code under test.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// B-splines: naive Cox-de Boor recursion on an explicit clamped knot vector.

inline std::vector<double> clamped_knots(int degree, std::vector<double> interior) {
  std::vector<double> k(static_cast<std::size_t>(degree + 1), 0.0);
  k.insert(k.end(), interior.begin(), interior.end());
  k.insert(k.end(), static_cast<std::size_t>(degree + 1), 1.0);
  return k;
}

inline double cox_de_boor(const std::vector<double>& t, std::size_t i, int p, double u) {
  if (p == 0) {
    if (t[i] <= u && u < t[i + 1]) return 1.0;
    // Close the last non-empty interval on the right.
    if (u == t.back() && t[i] < t[i + 1] && t[i + 1] == t.back()) return 1.0;
    return 0.0;
  }
  double left = 0.0, right = 0.0;
  const auto pp = static_cast<std::size_t>(p);
  if (t[i + pp] != t[i]) left = (u - t[i]) / (t[i + pp] - t[i]) * cox_de_boor(t, i, p - 1, u);
  if (t[i + pp + 1] != t[i + 1])
    right = (t[i + pp + 1] - u) / (t[i + pp + 1] - t[i + 1]) * cox_de_boor(t, i + 1, p - 1, u);
  return left + right;
}

inline std::vector<double> spline_row(double u, int degree = 2, std::vector<double> interior = {1.0 / 3, 2.0 / 3}) {
  const auto t = clamped_knots(degree, interior);
  std::vector<double> out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(degree) + 1 < t.size(); ++i)
    out.push_back(cox_de_boor(t, i, degree, u));
  return out;
}

// ---------------------------------------------------------------------------
// Hidden paths: exhaustive enumeration.

struct PathFixture {
  std::vector<std::uint8_t> y;
  std::vector<int> clamp;  // -1 missing
  std::vector<double> g0, g1, lambda;
  double p_public0 = 1.0;
};

/// Unnormalised probability of a full path, or 0 if it violates a clamp.
inline double path_weight(const PathFixture& f, const std::vector<int>& x) {
  const std::size_t n = f.y.size();
  double w = x[0] == 0 ? f.p_public0 : 1.0 - f.p_public0;
  for (std::size_t t = 0; t < n; ++t) {
    if (f.clamp[t] >= 0 && f.clamp[t] != x[t]) return 0.0;
    if (x[t] == 0) w *= f.y[t] ? f.lambda[t] : 1.0 - f.lambda[t];
    else if (f.y[t]) return 0.0;
    if (t + 1 < n) {
      const double move = x[t] == 0 ? f.g0[t] : f.g1[t];
      w *= x[t + 1] != x[t] ? move : 1.0 - move;
    }
  }
  return w;
}

struct Enumerated {
  std::vector<double> private_prob;
  std::vector<std::array<double, 4>> pairwise;
  double evidence = 0.0;
};

inline Enumerated enumerate(const PathFixture& f) {
  const std::size_t n = f.y.size();
  Enumerated e;
  e.private_prob.assign(n, 0.0);
  e.pairwise.assign(n ? n - 1 : 0, {0, 0, 0, 0});
  std::vector<int> x(n);
  for (std::uint32_t code = 0; code < (1u << n); ++code) {
    for (std::size_t t = 0; t < n; ++t) x[t] = (code >> t) & 1u;
    const double w = path_weight(f, x);
    if (w == 0.0) continue;
    e.evidence += w;
    for (std::size_t t = 0; t < n; ++t) e.private_prob[t] += w * x[t];
    for (std::size_t t = 0; t + 1 < n; ++t) e.pairwise[t][static_cast<std::size_t>(2 * x[t] + x[t + 1])] += w;
  }
  for (auto& p : e.private_prob) p /= e.evidence;
  for (auto& pw : e.pairwise)
    for (auto& v : pw) v /= e.evidence;
  return e;
}

// ---------------------------------------------------------------------------
// Logistic regression: direct log-likelihood, nested grid search, and
// finite-difference Hessian.

struct Binomial {
  Eigen::MatrixXd x;
  Eigen::VectorXd n, s;
};

inline double loglik(const Binomial& d, const Eigen::VectorXd& b) {
  double ll = 0.0;
  for (Eigen::Index r = 0; r < d.x.rows(); ++r) {
    const double p = sigmoid(d.x.row(r).dot(b));
    ll += d.s[r] * std::log(p) + (d.n[r] - d.s[r]) * std::log(1.0 - p);
  }
  return ll;
}

/// Maximises f over a box by repeated grid search, shrinking the grid
/// around the incumbent until the step falls below `final_step`.
inline Eigen::VectorXd grid_search(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd centre,
                                   double step, double final_step, int half_width = 5) {
  const Eigen::Index p = centre.size();
  const int side = 2 * half_width + 1;
  while (step >= final_step * 0.999) {
    Eigen::VectorXd best = centre;
    double best_val = f(centre);
    long total = 1;
    for (Eigen::Index k = 0; k < p; ++k) total *= side;
    Eigen::VectorXd cand(p);
    for (long code = 0; code < total; ++code) {
      long c = code;
      for (Eigen::Index k = 0; k < p; ++k) {
        cand[k] = centre[k] + step * static_cast<double>(c % side - half_width);
        c /= side;
      }
      const double v = f(cand);
      if (v > best_val) {
        best_val = v;
        best = cand;
      }
    }
    // Stay at this resolution while the optimum sits on the grid edge.
    const bool on_edge = ((best - centre).cwiseAbs().array() >= step * half_width - 1e-12).any();
    centre = best;
    if (!on_edge) step /= 10.0;
  }
  return centre;
}

inline Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& b,
                                  double h = 1e-4) {
  const Eigen::Index p = b.size();
  Eigen::MatrixXd hess(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) {
      auto at = [&](double di, double dj) {
        Eigen::VectorXd v = b;
        v[i] += di;
        v[j] += dj;
        return f(v);
      };
      hess(i, j) = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
    }
  return hess;
}

// ---------------------------------------------------------------------------
// Diagnostics: Gelman-Rubin statistic over m chains written from its
// textbook definition in long double.

inline double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  const auto m = static_cast<long double>(chains.size());
  const auto n = static_cast<long double>(chains[0].size());
  std::vector<long double> means;
  long double w = 0;
  for (const auto& c : chains) {
    long double mu = 0;
    for (double v : c) mu += v;
    mu /= n;
    means.push_back(mu);
    long double ss = 0;
    for (double v : c) ss += (v - mu) * (v - mu);
    w += ss / (n - 1);
  }
  w /= m;
  long double grand = 0;
  for (auto mu : means) grand += mu;
  grand /= m;
  long double b = 0;
  for (auto mu : means) b += (mu - grand) * (mu - grand);
  b *= n / (m - 1);
  const long double v = (n - 1) / n * w + b / n;
  return static_cast<double>(std::sqrt(v / w));
}

}  // namespace oracle
