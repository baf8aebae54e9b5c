#pragma once

// Metropolis-within-Gibbs sampler with data augmentation.
//
// Each iteration:
//   1. transition and emission probabilities are recomputed from the current
//      coefficients;
//   2. every individual with missing states gets a fresh path drawn from its
//      exact conditional (forward filtering, backward sampling);
//   3. the blocks beta0, beta1 and eta0 are updated in that order: the MLE and
//      inverse information are recomputed on the current paths, then
//      m_metropolis random-walk steps with covariance tau^2 * sigma_hat run.
//
// Random streams are derived from (seed, iteration, individual or block), so
// results do not depend on the thread count and a chain restored from a
// checkpoint continues exactly as an uninterrupted run would.

#include <array>
#include <cassert>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mstrace/error.hpp"
#include "mstrace/features.hpp"
#include "mstrace/forward_backward.hpp"
#include "mstrace/glm.hpp"
#include "mstrace/metropolis.hpp"
#include "mstrace/model.hpp"
#include "mstrace/panel.hpp"
#include "mstrace/parallel.hpp"
#include "mstrace/rng.hpp"

namespace mstrace {

/// How likelihood terms of imputed cells are weighted.
struct WeightsMode {
  enum class Kind { uniform, modular };
  Kind kind = Kind::uniform;
  /// Weight of terms touching an imputed cell in modular mode.
  double w_sim = 0.01;

  static WeightsMode uniform() { return {}; }
  static WeightsMode modular(double w) { return {Kind::modular, w}; }
  std::string describe() const { return kind == Kind::uniform ? "uniform" : "modular:" + format_double(w_sim); }
  friend bool operator==(const WeightsMode&, const WeightsMode&) = default;
};

struct SamplerConfig {
  long iterations = 5000;
  long burn_in = 200;
  double tau = 1.0;
  int m_metropolis = 30;
  Prior prior;
  WeightsMode weights;
  std::uint64_t seed = 1;
  /// Keep a full copy of the paths every `path_thinning` iterations (0: never).
  long path_thinning = 0;
  /// Trailing window over which imputed states are averaged.
  long window = 300;
  unsigned threads = 1;
  /// P(X = 0) at the start of each span.
  double initial_public_prob = 1.0;
  /// Ignore traces entirely (emissions neither conditioned on nor estimated).
  bool ignore_traces = false;

  void validate() const {
    if (iterations <= 0) throw ValidationError("sampler.iterations must be positive");
    if (burn_in < 0 || burn_in >= iterations) throw ValidationError("sampler.burn_in must satisfy 0 <= burn_in < iterations");
    if (!(tau > 0.0)) throw ValidationError("sampler.tau must be positive");
    if (m_metropolis <= 0) throw ValidationError("sampler.m_metropolis must be positive");
    if (weights.kind == WeightsMode::Kind::modular && !(weights.w_sim > 0.0 && weights.w_sim <= 1.0))
      throw ValidationError("modular weight must lie in (0, 1]");
    if (path_thinning < 0) throw ValidationError("sampler.path_thinning must be nonnegative");
    if (window < 0) throw ValidationError("sampler.window must be nonnegative");
    if (!(initial_public_prob >= 0.0 && initial_public_prob <= 1.0))
      throw ValidationError("sampler.initial_public_prob must lie in [0, 1]");
    if (prior.kind == Prior::Kind::gaussian && !(prior.sigma > 0.0))
      throw ValidationError("gaussian prior requires sigma > 0");
  }
};

struct PathSnapshot {
  long iteration = 0;
  std::vector<std::uint8_t> paths;
};

/// Stored output of a chain. params[k] is the state after iteration k + 1.
struct PosteriorDraws {
  std::array<std::vector<std::string>, 3> columns;
  std::array<bool, 3> sampled{true, true, true};
  std::vector<ParameterSet> params;
  long burn_in = 0;
  std::array<long, 3> accepted{}, proposed{}, mle_failures{};
  /// Per-cell count of X = 1 over the last `window_iterations` iterations.
  long window_iterations = 0;
  std::vector<std::uint32_t> private_counts;
  std::vector<PathSnapshot> snapshots;
  std::vector<std::string> warnings;

  long iterations() const { return static_cast<long>(params.size()); }

  double acceptance_rate(Block b) const {
    const auto k = static_cast<std::size_t>(b);
    return proposed[k] ? static_cast<double>(accepted[k]) / static_cast<double>(proposed[k]) : 0.0;
  }

  /// Draws of one block as an (iterations x coefficients) matrix.
  Eigen::MatrixXd block_draws(Block b, bool discard_burn_in = true) const {
    const long first = discard_burn_in ? std::min(burn_in, iterations()) : 0;
    const auto width = static_cast<Eigen::Index>(columns[static_cast<std::size_t>(b)].size());
    Eigen::MatrixXd m(iterations() - first, width);
    for (long k = first; k < iterations(); ++k) m.row(k - first) = params[static_cast<std::size_t>(k)].block(b).transpose();
    return m;
  }
};

class Chain {
 public:
  Chain(PanelData panel, const DesignConfig& design, SamplerConfig config)
      : panel_(std::move(panel)), config_(std::move(config)) {
    config_.validate();
    designs_ = assemble_designs(panel_, design);
    if (config_.ignore_traces) std::fill(designs_.traces.begin(), designs_.traces.end(), 0);
    for (Block b : kBlocks) index_[static_cast<std::size_t>(b)] = RowIndex(designs_.block(b));
    const std::size_t cells = designs_.cells();

    clamps_.assign(cells, -1);
    paths_.assign(cells, kPublic);
    for (std::size_t i = 0; i < panel_.individuals.size(); ++i) {
      const auto& rec = panel_.individuals[i];
      bool complete = true;
      for (std::size_t o = 0; o < rec.length(); ++o) {
        const std::size_t c = designs_.offsets[i] + o;
        if (rec.states[o]) {
          clamps_[c] = static_cast<std::int8_t>(*rec.states[o]);
          paths_[c] = *rec.states[o];
          if (*rec.states[o] == kPrivate && designs_.traces[c])
            throw ValidationError("private state with a trace" + at_cell(rec.id, rec.t_min + static_cast<long>(o)));
        } else {
          complete = false;
        }
      }
      if (!complete) incomplete_.push_back(i);
    }

    if (config_.weights.kind == WeightsMode::Kind::modular) {
      transition_weights_.assign(cells, 1.0);
      emission_weights_.assign(cells, 1.0);
      for (std::size_t i = 0; i + 1 < designs_.offsets.size(); ++i)
        for (std::size_t c = designs_.offsets[i]; c < designs_.offsets[i + 1]; ++c) {
          const bool imputed = clamps_[c] < 0;
          const bool next_imputed = c + 1 < designs_.offsets[i + 1] && clamps_[c + 1] < 0;
          if (imputed) emission_weights_[c] = config_.weights.w_sim;
          if (imputed || next_imputed) transition_weights_[c] = config_.weights.w_sim;
        }
    }

    for (Block b : kBlocks) draws_.columns[static_cast<std::size_t>(b)] = designs_.block(b).columns;
    draws_.sampled[static_cast<std::size_t>(Block::eta0)] = !config_.ignore_traces;
    draws_.burn_in = config_.burn_in;
    draws_.private_counts.assign(cells, 0);
    draws_.warnings = designs_.warnings;
    initialise_parameters();
  }

  const PanelData& panel() const { return panel_; }
  const Designs& designs() const { return designs_; }
  const SamplerConfig& config() const { return config_; }
  const ParameterSet& params() const { return params_; }
  std::span<const std::uint8_t> paths() const { return paths_; }
  std::span<const std::int8_t> clamps() const { return clamps_; }
  long iteration() const { return iteration_; }
  const PosteriorDraws& draws() const { return draws_; }
  PosteriorDraws take_draws() && { return std::move(draws_); }

  /// Replaces the current iterate. Paths must respect the observed cells and
  /// the no-trace-in-private constraint.
  void set_state(const ParameterSet& params, std::span<const std::uint8_t> paths) {
    params.validate(designs_);
    if (paths.size() != paths_.size()) throw ValidationError("path vector must cover every cell");
    const auto saved = paths_;
    std::copy(paths.begin(), paths.end(), paths_.begin());
    if (!clamps_respected()) {
      paths_ = saved;
      throw ValidationError("paths contradict observed states or traces");
    }
    params_ = params;
  }

  void run() { run_until(config_.iterations); }

  void run_until(long iteration) {
    while (iteration_ < iteration) step();
  }

  void step() {
    ++iteration_;
    try {
      const ModelFields fields = current_fields();
      gibbs_paths(fields);
      assert(clamps_respected());
      for (Block b : kBlocks) {
        if (b == Block::eta0 && config_.ignore_traces) continue;
        update_block(b);
      }
    } catch (const ValidationError& e) {
      throw ValidationError("iteration " + std::to_string(iteration_) + ": " + e.what());
    } catch (const NumericalError& e) {
      throw NumericalError("iteration " + std::to_string(iteration_) + ": " + e.what());
    }
    record();
  }

  /// True when every observed cell still holds its observed value and no
  /// public-sector trace sits on a private cell.
  bool clamps_respected() const {
    for (std::size_t c = 0; c < paths_.size(); ++c) {
      if (clamps_[c] >= 0 && paths_[c] != static_cast<std::uint8_t>(clamps_[c])) return false;
      if (paths_[c] == kPrivate && designs_.traces[c]) return false;
    }
    return true;
  }

  // -- checkpointing --------------------------------------------------------

  nlohmann::json checkpoint() const {
    nlohmann::json j;
    j["iteration"] = iteration_;
    j["cells"] = paths_.size();
    j["columns"] = draws_.columns;
    std::string p(paths_.size(), '0');
    for (std::size_t c = 0; c < paths_.size(); ++c) p[c] = paths_[c] ? '1' : '0';
    j["paths"] = p;
    j["params"] = params_to_json(params_);
    auto hist = nlohmann::json::array();
    for (const auto& ps : draws_.params) hist.push_back(params_to_json(ps));
    j["draws"] = std::move(hist);
    j["accepted"] = draws_.accepted;
    j["proposed"] = draws_.proposed;
    j["mle_failures"] = draws_.mle_failures;
    auto mles = nlohmann::json::array();
    for (const auto& m : last_mle_) {
      if (!m) {
        mles.push_back(nullptr);
        continue;
      }
      mles.push_back({{"mu", std::vector<double>(m->mu_hat.data(), m->mu_hat.data() + m->mu_hat.size())},
                      {"sigma", std::vector<double>(m->sigma_hat.data(), m->sigma_hat.data() + m->sigma_hat.size())}});
    }
    j["last_mle"] = std::move(mles);
    j["window_iterations"] = draws_.window_iterations;
    j["private_counts"] = draws_.private_counts;
    auto snaps = nlohmann::json::array();
    for (const auto& s : draws_.snapshots) {
      std::string bits(s.paths.size(), '0');
      for (std::size_t c = 0; c < s.paths.size(); ++c) bits[c] = s.paths[c] ? '1' : '0';
      snaps.push_back({{"iteration", s.iteration}, {"paths", bits}});
    }
    j["snapshots"] = std::move(snaps);
    return j;
  }

  /// Rebuilds a chain from the same inputs and a checkpoint.
  static Chain restore(PanelData panel, const DesignConfig& design, SamplerConfig config, const nlohmann::json& j) {
    Chain chain(std::move(panel), design, std::move(config));
    try {
      if (j.at("cells").get<std::size_t>() != chain.paths_.size() ||
          j.at("columns").get<std::array<std::vector<std::string>, 3>>() != chain.draws_.columns)
        throw ValidationError("checkpoint does not match the panel and design");
      chain.iteration_ = j.at("iteration").get<long>();
      const auto bits = j.at("paths").get<std::string>();
      for (std::size_t c = 0; c < bits.size(); ++c) chain.paths_[c] = bits[c] == '1';
      chain.params_ = params_from_json(j.at("params"));
      chain.draws_.params.clear();
      for (const auto& ps : j.at("draws")) chain.draws_.params.push_back(params_from_json(ps));
      chain.draws_.accepted = j.at("accepted").get<std::array<long, 3>>();
      chain.draws_.proposed = j.at("proposed").get<std::array<long, 3>>();
      chain.draws_.mle_failures = j.at("mle_failures").get<std::array<long, 3>>();
      const auto& mles = j.at("last_mle");
      for (std::size_t b = 0; b < 3; ++b) {
        if (mles.at(b).is_null()) {
          chain.last_mle_[b].reset();
          continue;
        }
        const auto mu = mles.at(b).at("mu").get<std::vector<double>>();
        const auto sigma = mles.at(b).at("sigma").get<std::vector<double>>();
        MleResult m;
        m.mu_hat = Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size()));
        m.sigma_hat = Eigen::Map<const Eigen::MatrixXd>(sigma.data(), static_cast<Eigen::Index>(mu.size()),
                                                        static_cast<Eigen::Index>(mu.size()));
        chain.last_mle_[b] = std::move(m);
      }
      chain.draws_.window_iterations = j.at("window_iterations").get<long>();
      chain.draws_.private_counts = j.at("private_counts").get<std::vector<std::uint32_t>>();
      chain.draws_.snapshots.clear();
      for (const auto& s : j.at("snapshots")) {
        PathSnapshot snap;
        snap.iteration = s.at("iteration").get<long>();
        for (char ch : s.at("paths").get<std::string>()) snap.paths.push_back(ch == '1');
        chain.draws_.snapshots.push_back(std::move(snap));
      }
      chain.params_.validate(chain.designs_);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed checkpoint: ") + e.what());
    }
    return chain;
  }

 private:
  static nlohmann::json params_to_json(const ParameterSet& p) {
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return nlohmann::json::array({vec(p.beta0), vec(p.beta1), vec(p.eta0)});
  }
  static ParameterSet params_from_json(const nlohmann::json& j) {
    auto vec = [](const nlohmann::json& a) {
      const auto v = a.get<std::vector<double>>();
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    return {vec(j.at(0)), vec(j.at(1)), vec(j.at(2))};
  }

  std::span<const double> block_weights(Block b) const {
    if (config_.weights.kind == WeightsMode::Kind::uniform) return {};
    return b == Block::eta0 ? std::span<const double>(emission_weights_) : std::span<const double>(transition_weights_);
  }

  /// Starting values: MLE on the individuals whose states are fully observed.
  void initialise_parameters() {
    params_ = ParameterSet::zeros(designs_);
    const std::size_t cells = designs_.cells();
    std::vector<double> mask(cells, 1.0);
    bool any_complete = false;
    std::size_t next_incomplete = 0;
    for (std::size_t i = 0; i + 1 < designs_.offsets.size(); ++i) {
      const bool incomplete = next_incomplete < incomplete_.size() && incomplete_[next_incomplete] == i;
      if (incomplete) ++next_incomplete;
      else any_complete = true;
      if (incomplete)
        for (std::size_t c = designs_.offsets[i]; c < designs_.offsets[i + 1]; ++c) mask[c] = 0.0;
    }
    if (!any_complete) {
      draws_.warnings.push_back("no fully observed individual: starting from zero coefficients");
      return;
    }
    for (Block b : kBlocks) {
      if (b == Block::eta0 && config_.ignore_traces) continue;
      const auto k = static_cast<std::size_t>(b);
      try {
        const BinomialRows rows = collect_block_rows(b, paths_, designs_, index_[k], mask);
        auto mle = glm_mle(rows, params_.block(b));
        params_.block(b) = mle.mu_hat;
        last_mle_[k] = std::move(mle);
      } catch (const NumericalError& e) {
        draws_.warnings.push_back(std::string("initial MLE for ") + block_name(b) + " failed (" + e.what() +
                                  "): starting from zero");
      }
    }
  }

  ModelFields current_fields() const {
    ModelFields f;
    auto eval = [&](Block b, std::vector<double>& out) {
      const auto& index = index_[static_cast<std::size_t>(b)];
      const Eigen::VectorXd eta = index.unique_rows() * params_.block(b);
      std::vector<double> unique(static_cast<std::size_t>(eta.size()));
      for (Eigen::Index u = 0; u < eta.size(); ++u) unique[static_cast<std::size_t>(u)] = logistic(eta[u]);
      const auto rows = index.cell_rows();
      out.resize(rows.size());
      for (std::size_t c = 0; c < rows.size(); ++c) out[c] = unique[rows[c]];
    };
    eval(Block::beta0, f.gamma0);
    eval(Block::beta1, f.gamma1);
    if (!config_.ignore_traces) eval(Block::eta0, f.lambda);
    return f;
  }

  void gibbs_paths(const ModelFields& fields) {
    parallel_for(incomplete_.size(), config_.threads, [&](std::size_t k) {
      thread_local std::vector<double> alpha;
      const std::size_t i = incomplete_[k];
      const auto& rec = panel_.individuals[i];
      const std::size_t begin = designs_.offsets[i];
      const std::size_t n = rec.length();
      PathProblem p;
      p.id = rec.id;
      p.t_min = rec.t_min;
      p.traces = std::span<const std::uint8_t>(designs_.traces).subspan(begin, n);
      p.clamps = std::span<const std::int8_t>(clamps_).subspan(begin, n);
      p.gamma0 = std::span<const double>(fields.gamma0).subspan(begin, n);
      p.gamma1 = std::span<const double>(fields.gamma1).subspan(begin, n);
      if (!config_.ignore_traces) p.lambda = std::span<const double>(fields.lambda).subspan(begin, n);
      p.initial_public_prob = config_.initial_public_prob;
      p.ignore_traces = config_.ignore_traces;
      Rng rng = derive_stream(config_.seed, StreamTag::gibbs, static_cast<std::uint64_t>(iteration_), i);
      sample_hidden_path(p, std::span<std::uint8_t>(paths_).subspan(begin, n), rng, alpha);
    });
  }

  void update_block(Block b) {
    const auto k = static_cast<std::size_t>(b);
    const BinomialRows rows = collect_block_rows(b, paths_, designs_, index_[k], block_weights(b));
    double tau = config_.tau;
    Eigen::MatrixXd sigma;
    try {
      const Eigen::VectorXd& warm = last_mle_[k] ? last_mle_[k]->mu_hat : params_.block(b);
      last_mle_[k] = glm_mle(rows, warm);
      sigma = last_mle_[k]->sigma_hat;
    } catch (const NumericalError&) {
      ++draws_.mle_failures[k];
      tau *= 2.0;
      sigma = last_mle_[k] ? last_mle_[k]->sigma_hat
                           : Eigen::MatrixXd::Identity(params_.block(b).size(), params_.block(b).size());
    }
    Rng rng = derive_stream(config_.seed, StreamTag::metropolis, static_cast<std::uint64_t>(iteration_), k);
    auto loglik = [&rows](const Eigen::VectorXd& beta) { return binomial_log_likelihood(rows, beta); };
    const auto res = metropolis_block_update(params_.block(b), loglik, config_.prior, sigma, tau,
                                             config_.m_metropolis, rng);
    params_.block(b) = res.state;
    draws_.accepted[k] += res.accepted;
    draws_.proposed[k] += res.proposed;
  }

  void record() {
    draws_.params.push_back(params_);
    if (iteration_ > config_.iterations - config_.window && iteration_ <= config_.iterations) {
      ++draws_.window_iterations;
      for (std::size_t c = 0; c < paths_.size(); ++c) draws_.private_counts[c] += paths_[c];
    }
    if (config_.path_thinning > 0 && iteration_ % config_.path_thinning == 0)
      draws_.snapshots.push_back({iteration_, paths_});
  }

  PanelData panel_;
  SamplerConfig config_;
  Designs designs_;
  std::array<RowIndex, 3> index_;
  std::vector<std::int8_t> clamps_;
  std::vector<std::uint8_t> paths_;
  std::vector<std::size_t> incomplete_;
  std::vector<double> transition_weights_, emission_weights_;
  ParameterSet params_;
  std::array<std::optional<MleResult>, 3> last_mle_;
  PosteriorDraws draws_;
  long iteration_ = 0;
};

inline PosteriorDraws run_mcmc(const PanelData& panel, const DesignConfig& design, const SamplerConfig& config) {
  Chain chain(panel, design, config);
  chain.run();
  return std::move(chain).take_draws();
}

}  // namespace mstrace
