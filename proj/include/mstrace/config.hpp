#pragma once

// Run configuration shared by simulate, fit, evaluate and replicate.
//
//   {
//     "seed": 1,
//     "dgp":     { "n_individuals": 500, "span_length": 60, "observed_count": 500,
//                  "observed_fraction": 1.0, "observation": "individuals",
//                  "initial_state": 0,
//                  "gamma0": [["1", -4], ["cohort", 1]], "gamma1": [["1", -4]],
//                  "lambda": [["1", -1.5]], "seed": 1 },
//     "design":  { "beta0": ["1", "cohort"], "beta1": ["1"], "eta0": ["1"],
//                  "phi": 0.8, "zero_first_trace": true,
//                  "allow_trace_terms_in_transitions": false,
//                  "election_points": [11, 25, 35, 45, 55, 65] },
//     "sampler": { "iterations": 5000, "burn_in": 200, "tau": 1, "m_metropolis": 30,
//                  "prior": "flat", "weights": "uniform", "path_thinning": 0,
//                  "window": 300, "threads": 1, "initial_public_prob": 1,
//                  "ignore_traces": false },
//     "holdout": { "fraction": 0.2, "seed": 1 },
//     "truth":   { "beta0": [-4, 1], "beta1": [-4], "eta0": [-1.5] }
//   }
//
// Every section is optional. Unknown keys are rejected.

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mstrace/error.hpp"
#include "mstrace/features.hpp"
#include "mstrace/metropolis.hpp"
#include "mstrace/sampler.hpp"
#include "mstrace/synthgen.hpp"
#include "mstrace/text.hpp"

namespace mstrace {

using Json = nlohmann::ordered_json;

struct HoldoutSpec {
  double fraction = 0.2;
  std::optional<std::uint64_t> seed;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::optional<SyntheticDGP> dgp;
  DesignConfig design;
  SamplerConfig sampler;
  std::optional<HoldoutSpec> holdout;
  std::array<std::vector<std::optional<double>>, 3> truth;

  bool has_truth() const { return !truth[0].empty() || !truth[1].empty() || !truth[2].empty(); }
  std::uint64_t holdout_seed() const { return holdout && holdout->seed ? *holdout->seed : seed; }
};

inline Prior parse_prior(std::string_view s) {
  if (s == "flat") return Prior::flat();
  if (s.starts_with("gaussian:")) {
    const auto sigma = parse_double(s.substr(9));
    if (!sigma) throw ValidationError("prior '" + std::string(s) + "': bad sigma");
    return Prior::gaussian(*sigma);
  }
  throw ValidationError("prior must be 'flat' or 'gaussian:<sigma>', got '" + std::string(s) + "'");
}

inline WeightsMode parse_weights(std::string_view s) {
  if (s == "uniform") return WeightsMode::uniform();
  if (s == "modular") return WeightsMode::modular(0.01);
  if (s.starts_with("modular:")) {
    const auto w = parse_double(s.substr(8));
    if (!w || !(*w > 0.0 && *w <= 1.0)) throw ValidationError("weights '" + std::string(s) + "': w must lie in (0, 1]");
    return WeightsMode::modular(*w);
  }
  throw ValidationError("weights must be 'uniform' or 'modular:<w>', got '" + std::string(s) + "'");
}

namespace detail {

/// Reads fields of one JSON object, tracking which keys were consumed.
class FieldReader {
 public:
  FieldReader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ValidationError("config field '" + path_ + "': expected an object");
  }

  std::string where(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

  const Json* find(std::string_view key) {
    const auto it = obj_.find(std::string(key));
    if (it == obj_.end()) return nullptr;
    used_.insert(std::string(key));
    return &*it;
  }

  template <class T>
  void read(std::string_view key, T& out) {
    const Json* v = find(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw std::invalid_argument("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v->is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (v->is_number_integer() && v->get<long long>() < 0) throw std::invalid_argument("expected a nonnegative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw std::invalid_argument("expected a string");
      }
      out = v->get<T>();
    } catch (const std::exception& e) {
      throw ValidationError("config field '" + where(key) + "': " + e.what());
    }
  }

  std::vector<std::string> strings(std::string_view key, std::vector<std::string> fallback) {
    const Json* v = find(key);
    if (!v) return fallback;
    if (!v->is_array()) throw ValidationError("config field '" + where(key) + "': expected a list of strings");
    std::vector<std::string> out;
    for (const auto& e : *v) {
      if (!e.is_string()) throw ValidationError("config field '" + where(key) + "': expected a list of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!used_.count(it.key())) throw ValidationError("config field '" + where(it.key()) + "': unknown key");
  }

 private:
  const Json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

inline LinearPredictor read_predictor(const Json& v, const std::string& where) {
  LinearPredictor out;
  const std::string msg = "config field '" + where + "': expected a list of [term, coefficient] pairs";
  if (!v.is_array()) throw ValidationError(msg);
  for (const auto& e : v) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_number()) throw ValidationError(msg);
    out.emplace_back(e[0].get<std::string>(), e[1].get<double>());
  }
  return out;
}

inline Json predictor_json(const LinearPredictor& lp) {
  Json a = Json::array();
  for (const auto& [t, c] : lp) a.push_back(Json::array({t, c}));
  return a;
}

inline std::string line_context(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t k = 0; k < std::min(byte, text.size()); ++k) {
    if (text[k] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

inline SyntheticDGP dgp_from_json(const Json& j, std::uint64_t default_seed) {
  detail::FieldReader r(j, "dgp");
  SyntheticDGP d;
  d.seed = default_seed;
  r.read("n_individuals", d.n_individuals);
  r.read("span_length", d.span_length);
  if (const Json* v = r.find("observed_count")) {
    if (!v->is_null()) {
      if (!v->is_number_integer()) throw ValidationError("config field 'dgp.observed_count': expected an integer");
      d.observed_count = v->get<long>();
    }
  }
  r.read("observed_fraction", d.observed_fraction);
  std::string mode = "individuals";
  r.read("observation", mode);
  if (mode == "individuals") d.observation = ObservationMode::individuals;
  else if (mode == "cells") d.observation = ObservationMode::cells;
  else throw ValidationError("config field 'dgp.observation': expected 'individuals' or 'cells'");
  int init = 0;
  r.read("initial_state", init);
  if (init != 0 && init != 1) throw ValidationError("config field 'dgp.initial_state': expected 0 or 1");
  d.initial_state = static_cast<std::uint8_t>(init);
  if (const Json* v = r.find("gamma0")) d.gamma0 = detail::read_predictor(*v, "dgp.gamma0");
  if (const Json* v = r.find("gamma1")) d.gamma1 = detail::read_predictor(*v, "dgp.gamma1");
  if (const Json* v = r.find("lambda")) d.lambda = detail::read_predictor(*v, "dgp.lambda");
  r.read("seed", d.seed);
  r.finish();
  d.validate();
  return d;
}

inline Json dgp_to_json(const SyntheticDGP& d) {
  Json j;
  j["n_individuals"] = d.n_individuals;
  j["span_length"] = d.span_length;
  if (d.observed_count) j["observed_count"] = *d.observed_count;
  else j["observed_fraction"] = d.observed_fraction;
  j["observation"] = d.observation == ObservationMode::individuals ? "individuals" : "cells";
  j["initial_state"] = d.initial_state;
  j["gamma0"] = detail::predictor_json(d.gamma0);
  j["gamma1"] = detail::predictor_json(d.gamma1);
  j["lambda"] = detail::predictor_json(d.lambda);
  j["seed"] = d.seed;
  return j;
}

inline DesignConfig design_from_json(const Json& j) {
  detail::FieldReader r(j, "design");
  DesignConfig d;
  d.beta0 = r.strings("beta0", d.beta0);
  d.beta1 = r.strings("beta1", d.beta1);
  d.eta0 = r.strings("eta0", d.eta0);
  r.read("phi", d.phi);
  r.read("zero_first_trace", d.zero_first_trace);
  r.read("allow_trace_terms_in_transitions", d.allow_trace_terms_in_transitions);
  r.read("election_points", d.election_points);
  r.finish();
  try {
    resolve_design(d);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("config section 'design': ") + e.what());
  }
  return d;
}

inline Json design_to_json(const DesignConfig& d) {
  Json j;
  j["beta0"] = d.beta0;
  j["beta1"] = d.beta1;
  j["eta0"] = d.eta0;
  j["phi"] = d.phi;
  j["zero_first_trace"] = d.zero_first_trace;
  j["allow_trace_terms_in_transitions"] = d.allow_trace_terms_in_transitions;
  j["election_points"] = d.election_points;
  return j;
}

inline SamplerConfig sampler_from_json(const Json& j, std::uint64_t default_seed) {
  detail::FieldReader r(j, "sampler");
  SamplerConfig s;
  s.seed = default_seed;
  r.read("iterations", s.iterations);
  r.read("burn_in", s.burn_in);
  r.read("tau", s.tau);
  r.read("m_metropolis", s.m_metropolis);
  std::string prior = "flat", weights = "uniform";
  r.read("prior", prior);
  r.read("weights", weights);
  try {
    s.prior = parse_prior(prior);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("config field 'sampler.prior': ") + e.what());
  }
  try {
    s.weights = parse_weights(weights);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("config field 'sampler.weights': ") + e.what());
  }
  r.read("seed", s.seed);
  r.read("path_thinning", s.path_thinning);
  r.read("window", s.window);
  r.read("threads", s.threads);
  r.read("initial_public_prob", s.initial_public_prob);
  r.read("ignore_traces", s.ignore_traces);
  r.finish();
  s.validate();
  return s;
}

inline Json sampler_to_json(const SamplerConfig& s) {
  Json j;
  j["iterations"] = s.iterations;
  j["burn_in"] = s.burn_in;
  j["tau"] = s.tau;
  j["m_metropolis"] = s.m_metropolis;
  j["prior"] = s.prior.describe();
  j["weights"] = s.weights.describe();
  j["seed"] = s.seed;
  j["path_thinning"] = s.path_thinning;
  j["window"] = s.window;
  j["threads"] = s.threads;
  j["initial_public_prob"] = s.initial_public_prob;
  j["ignore_traces"] = s.ignore_traces;
  return j;
}

inline RunConfig run_config_from_json(const Json& j) {
  detail::FieldReader r(j, "");
  RunConfig c;
  r.read("seed", c.seed);
  if (const Json* v = r.find("dgp")) c.dgp = dgp_from_json(*v, c.seed);
  if (const Json* v = r.find("design")) c.design = design_from_json(*v);
  c.sampler.seed = c.seed;
  if (const Json* v = r.find("sampler")) c.sampler = sampler_from_json(*v, c.seed);
  if (const Json* v = r.find("holdout")) {
    detail::FieldReader h(*v, "holdout");
    HoldoutSpec spec;
    h.read("fraction", spec.fraction);
    if (const Json* s = h.find("seed")) {
      if (!s->is_number_unsigned()) throw ValidationError("config field 'holdout.seed': expected a nonnegative integer");
      spec.seed = s->get<std::uint64_t>();
    }
    h.finish();
    if (!(spec.fraction > 0.0 && spec.fraction < 1.0))
      throw ValidationError("config field 'holdout.fraction': must lie in (0, 1)");
    c.holdout = spec;
  }
  if (const Json* v = r.find("truth")) {
    detail::FieldReader t(*v, "truth");
    for (Block b : kBlocks) {
      const Json* list = t.find(block_name(b));
      if (!list) continue;
      const std::string where = std::string("truth.") + block_name(b);
      if (!list->is_array()) throw ValidationError("config field '" + where + "': expected a list");
      for (const auto& e : *list) {
        if (e.is_null()) c.truth[static_cast<std::size_t>(b)].push_back(std::nullopt);
        else if (e.is_number()) c.truth[static_cast<std::size_t>(b)].push_back(e.get<double>());
        else throw ValidationError("config field '" + where + "': expected numbers or null");
      }
    }
    t.finish();
  }
  r.finish();
  return c;
}

inline RunConfig parse_run_config(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config is not valid JSON at " + detail::line_context(text, e.byte > 0 ? e.byte - 1 : 0));
  }
  return run_config_from_json(j);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunConfig load_run_config(const std::string& path) {
  try {
    return parse_run_config(read_text_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

/// Fully resolved configuration with every default written out.
inline Json run_config_to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  if (c.dgp) j["dgp"] = dgp_to_json(*c.dgp);
  j["design"] = design_to_json(c.design);
  j["sampler"] = sampler_to_json(c.sampler);
  if (c.holdout) {
    Json h;
    h["fraction"] = c.holdout->fraction;
    h["seed"] = c.holdout_seed();
    j["holdout"] = h;
  }
  if (c.has_truth()) {
    Json t;
    for (Block b : kBlocks) {
      Json a = Json::array();
      for (const auto& v : c.truth[static_cast<std::size_t>(b)]) a.push_back(v ? Json(*v) : Json(nullptr));
      t[block_name(b)] = a;
    }
    j["truth"] = t;
  }
  return j;
}

/// The standard configuration of a synthetic experiment preset.
inline RunConfig run_config_from_setup(const ExperimentSetup& e, std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.dgp = e.dgp;
  c.dgp->seed = seed;
  c.design = e.design;
  c.sampler = e.sampler;
  c.sampler.seed = seed;
  c.truth = e.truth;
  return c;
}

}  // namespace mstrace
