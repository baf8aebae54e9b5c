#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mstrace/forward_backward.hpp"
#include "mstrace/panel.hpp"
#include "mstrace/rng.hpp"
#include "oracles.hpp"

namespace testutil {

/// Panel of individuals given as (states, traces); state -1 is missing.
/// Individuals are named i1, i2, ... and start at t = 1. No covariates.
inline mstrace::PanelData intercept_panel(const std::vector<std::pair<std::vector<int>, std::vector<int>>>& spec) {
  mstrace::PanelData panel;
  int k = 0;
  for (const auto& [x, y] : spec) {
    mstrace::IndividualRecord rec;
    rec.id = "i" + std::to_string(++k);
    for (int v : x) rec.states.push_back(v < 0 ? mstrace::StateCell{} : mstrace::StateCell(static_cast<std::uint8_t>(v)));
    for (int v : y) rec.traces.push_back(static_cast<std::uint8_t>(v));
    panel.individuals.push_back(std::move(rec));
  }
  panel.validate();
  return panel;
}

/// Fully observed random panel with one covariate "x1" in [0, 1].
inline mstrace::PanelData random_complete_panel(int n, int span, std::uint64_t seed) {
  auto rng = mstrace::derive_stream(seed, mstrace::StreamTag::test);
  mstrace::PanelData panel;
  panel.covariate_names = {"x1"};
  for (int i = 0; i < n; ++i) {
    mstrace::IndividualRecord rec;
    rec.id = "r" + std::to_string(i + 1);
    rec.covariates.assign(1, {});
    std::uint8_t x = 0;
    for (int t = 0; t < span; ++t) {
      if (t > 0 && mstrace::uniform01(rng) < 0.25) x = static_cast<std::uint8_t>(1 - x);
      rec.states.emplace_back(x);
      rec.traces.push_back(x == 0 && mstrace::uniform01(rng) < 0.4 ? 1 : 0);
      rec.covariates[0].push_back(mstrace::uniform01(rng));
    }
    panel.individuals.push_back(std::move(rec));
  }
  panel.validate();
  return panel;
}

// Owns the buffers a mstrace::PathProblem points into.
struct OwnedProblem {
  std::vector<std::uint8_t> y;
  std::vector<std::int8_t> clamp;
  std::vector<double> g0, g1, lambda;
  double p0 = 1.0;

  mstrace::PathProblem view() const {
    mstrace::PathProblem p;
    p.id = "f";
    p.traces = y;
    p.clamps = clamp;
    p.gamma0 = g0;
    p.gamma1 = g1;
    p.lambda = lambda;
    p.initial_public_prob = p0;
    return p;
  }
  oracle::PathFixture fixture() const {
    oracle::PathFixture f;
    f.y = y;
    f.clamp.assign(clamp.begin(), clamp.end());
    f.g0 = g0;
    f.g1 = g1;
    f.lambda = lambda;
    f.p_public0 = p0;
    return f;
  }
};

inline OwnedProblem random_problem(mstrace::Rng& rng) {
  OwnedProblem p;
  const std::size_t n = 2 + rng() % 7;
  for (std::size_t t = 0; t < n; ++t) {
    p.g0.push_back(0.02 + 0.9 * mstrace::uniform01(rng));
    p.g1.push_back(0.02 + 0.9 * mstrace::uniform01(rng));
    p.lambda.push_back(0.05 + 0.9 * mstrace::uniform01(rng));
    const auto y = static_cast<std::uint8_t>(mstrace::uniform01(rng) < 0.3);
    p.y.push_back(y);
    std::int8_t c = -1;
    if (mstrace::uniform01(rng) < 0.25) c = y ? 0 : static_cast<std::int8_t>(rng() % 2);
    p.clamp.push_back(c);
  }
  p.p0 = mstrace::uniform01(rng) < 0.5 ? 1.0 : 0.3 + 0.6 * mstrace::uniform01(rng);
  return p;
}

}  // namespace testutil
