#pragma once

// Posterior summaries and chain diagnostics.
//
// ESS uses the initial positive sequence estimator: autocorrelations are
// summed in adjacent pairs until the first negative pair. R-hat is the
// split-half potential scale reduction of a single chain. Quantiles use
// linear interpolation between order statistics (type 7).

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "mstrace/error.hpp"
#include "mstrace/numeric.hpp"
#include "mstrace/sampler.hpp"

namespace mstrace {

inline double quantile_type7(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty series");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace detail {
inline double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double sample_variance(std::span<const double> x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// Sample autocovariances (divisor n) at lags 0..n-1 via zero-padded FFT.
inline std::vector<double> autocovariance(std::span<const double> x) {
  const std::size_t n = x.size();
  const double m = mean(x);
  std::size_t len = 1;
  while (len < 2 * n) len <<= 1;
  std::vector<double> padded(len, 0.0);
  for (std::size_t t = 0; t < n; ++t) padded[t] = x[t] - m;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& f : freq) f = std::complex<double>(std::norm(f), 0.0);
  std::vector<double> acov;
  fft.inv(acov, freq);
  acov.resize(n);
  for (double& v : acov) v /= static_cast<double>(n);
  return acov;
}
}  // namespace detail

inline double effective_sample_size(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < 10) throw ValidationError("ESS needs at least 10 draws");
  for (double v : series)
    if (!std::isfinite(v)) throw ValidationError("ESS of a non-finite series");
  const auto acov = detail::autocovariance(series);
  if (!(acov[0] > 0.0)) throw NumericalError("ESS of a zero-variance series");
  // rho_0 + rho_1 is the first pair; tau = -1 + 2 * sum of positive pair sums.
  double sum_pairs = 0.0;
  for (std::size_t k = 0; k + 1 < n; k += 2) {
    const double pair = (acov[k] + acov[k + 1]) / acov[0];
    if (pair < 0.0) break;
    sum_pairs += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum_pairs, 1.0 / std::log10(static_cast<double>(n)));
  return std::min(static_cast<double>(n) / tau, static_cast<double>(n));
}

/// Potential scale reduction comparing the first and second half of a chain
/// (the middle draw is dropped for odd lengths).
inline double split_rhat(std::span<const double> series) {
  if (series.size() < 4) throw ValidationError("split R-hat needs at least 4 draws");
  const std::size_t half = series.size() / 2;
  const auto a = series.first(half);
  const auto b = series.last(half);
  const double n = static_cast<double>(half);
  const double wa = detail::sample_variance(a), wb = detail::sample_variance(b);
  const double w = 0.5 * (wa + wb);
  if (!(w > 0.0)) throw NumericalError("split R-hat with zero within-chain variance");
  const double ma = detail::mean(a), mb = detail::mean(b), m = 0.5 * (ma + mb);
  const double between = n * ((ma - m) * (ma - m) + (mb - m) * (mb - m));  // divisor (chains - 1) = 1
  const double var_plus = (n - 1.0) / n * w + between / n;
  return std::sqrt(var_plus / w);
}

struct CoefficientSummary {
  std::string block;
  std::string name;
  std::vector<double> quantiles;
  double mean = 0.0;
  double ess = std::numeric_limits<double>::quiet_NaN();
  double rhat = std::numeric_limits<double>::quiet_NaN();
  /// Quantiles of exp(coefficient).
  std::vector<double> odds_ratio;
};

struct SummaryTable {
  std::vector<double> levels;
  std::vector<CoefficientSummary> rows;
  std::vector<std::string> warnings;

  const CoefficientSummary& find(std::string_view block, std::string_view name) const {
    for (const auto& r : rows)
      if (r.block == block && r.name == name) return r;
    throw ValidationError("unknown coefficient " + std::string(block) + "/" + std::string(name));
  }
};

/// Summary of one series. Constant series get ESS/R-hat left as NaN.
inline CoefficientSummary summarize_series(std::span<const double> draws, std::vector<double> levels) {
  if (draws.empty()) throw ValidationError("cannot summarise an empty series");
  CoefficientSummary s;
  std::vector<double> v(draws.begin(), draws.end());
  for (double q : levels) s.quantiles.push_back(quantile_type7(v, q));
  for (double q : s.quantiles) s.odds_ratio.push_back(std::exp(q));
  s.mean = detail::mean(draws);
  const bool constant = std::all_of(draws.begin(), draws.end(), [&](double x) { return x == draws[0]; });
  if (!constant && draws.size() >= 10) {
    s.ess = effective_sample_size(draws);
    s.rhat = split_rhat(draws);
  }
  return s;
}

inline constexpr double kEssThreshold = 200.0;
inline constexpr double kRhatThreshold = 1.006;

/// Per-coefficient summary of post-burn-in draws; unsampled blocks are skipped.
inline SummaryTable summarize(const PosteriorDraws& draws, std::vector<double> levels = {0.05, 0.5, 0.95}) {
  SummaryTable t;
  t.levels = levels;
  for (Block b : kBlocks) {
    const auto k = static_cast<std::size_t>(b);
    if (!draws.sampled[k]) continue;
    const Eigen::MatrixXd m = draws.block_draws(b, true);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const Eigen::VectorXd col = m.col(j);
      auto s = summarize_series(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), levels);
      s.block = block_name(b);
      s.name = draws.columns[k][static_cast<std::size_t>(j)];
      if (!(s.ess > kEssThreshold))
        t.warnings.push_back(s.block + "/" + s.name + ": ESS " + format_double(s.ess) + " below 200");
      if (!(s.rhat < kRhatThreshold))
        t.warnings.push_back(s.block + "/" + s.name + ": split R-hat " + format_double(s.rhat) + " above 1.006");
      t.rows.push_back(std::move(s));
    }
  }
  return t;
}

/// Quantiles of logistic(x' beta) over post-burn-in draws, one x per point:
/// marginal probability curves such as exit probability against age.
struct CurvePoint {
  double x = 0.0;
  double median = 0.0, lo = 0.0, hi = 0.0;
};

inline std::vector<CurvePoint> marginal_probability_curve(const PosteriorDraws& draws, Block b,
                                                          const std::vector<double>& xs, const RowMatrix& rows,
                                                          double lo_level = 0.05, double hi_level = 0.95) {
  const Eigen::MatrixXd m = draws.block_draws(b, true);
  if (rows.cols() != m.cols()) throw ValidationError("curve design width differs from the block");
  if (static_cast<std::size_t>(rows.rows()) != xs.size()) throw ValidationError("one design row per curve point");
  std::vector<CurvePoint> out;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const Eigen::VectorXd eta = m * rows.row(r).transpose();
    std::vector<double> p(static_cast<std::size_t>(eta.size()));
    for (Eigen::Index k = 0; k < eta.size(); ++k) p[static_cast<std::size_t>(k)] = logistic(eta[k]);
    out.push_back({xs[static_cast<std::size_t>(r)], quantile_type7(p, 0.5), quantile_type7(p, lo_level),
                   quantile_type7(p, hi_level)});
  }
  return out;
}

struct HistogramBin {
  double lo = 0.0, hi = 0.0;
  double density = 0.0;
};

inline std::vector<HistogramBin> histogram(std::span<const double> x, int bins) {
  if (x.empty() || bins <= 0) throw ValidationError("histogram needs data and a positive bin count");
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  double lo = *mn, hi = *mx;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  std::vector<HistogramBin> out(static_cast<std::size_t>(bins));
  for (int k = 0; k < bins; ++k) out[static_cast<std::size_t>(k)] = {lo + k * width, lo + (k + 1) * width, 0.0};
  for (double v : x) {
    auto k = static_cast<int>((v - lo) / width);
    k = std::clamp(k, 0, bins - 1);
    out[static_cast<std::size_t>(k)].density += 1.0;
  }
  for (auto& b : out) b.density /= static_cast<double>(x.size()) * width;
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction loss

inline constexpr double kClipLow = 0.01;
inline constexpr double kClipHigh = 0.99;

inline double clip_probability(double p, double lo = kClipLow, double hi = kClipHigh) {
  return std::clamp(p, lo, hi);
}

/// Clipped trailing-window averages of the imputed state, one per cell.
inline std::vector<double> reconstruction_predictions(const PosteriorDraws& draws, long window,
                                                      double lo = kClipLow, double hi = kClipHigh) {
  if (window <= 0) throw ValidationError("prediction window must be positive");
  if (draws.window_iterations != window)
    throw ValidationError("window of " + std::to_string(window) + " iterations does not match the " +
                          std::to_string(draws.window_iterations) + " stored");
  if (window > draws.iterations() - draws.burn_in)
    throw ValidationError("prediction window exceeds the post-burn-in history");
  std::vector<double> out(draws.private_counts.size());
  for (std::size_t c = 0; c < out.size(); ++c)
    out[c] = clip_probability(static_cast<double>(draws.private_counts[c]) / static_cast<double>(window), lo, hi);
  return out;
}

inline double cross_entropy(int x_obs, double p_pred) {
  if (x_obs != 0 && x_obs != 1) throw ValidationError("observed state must be 0 or 1");
  if (!(p_pred > 0.0 && p_pred < 1.0)) throw ValidationError("predicted probability must lie in (0, 1)");
  return x_obs ? -std::log(p_pred) : -std::log1p(-p_pred);
}

}  // namespace mstrace
