// mstrace: simulate, fit, evaluate, diagnose and replicate from the command line.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "mstrace/mstrace.hpp"

namespace fs = std::filesystem;
using namespace mstrace;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  std::ostringstream out;
  for (unsigned int k = 0; k < len; ++k) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[k]);
  return out.str();
}

std::string file_hash(const std::string& path) { return sha256_hex(read_text_file(path)); }

void write_file(const fs::path& path, std::string_view content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw Error("write failed for '" + path.string() + "'");
  }
  fs::rename(tmp, path);
}

fs::path default_out(const std::string& command) {
  const char* root = std::getenv("MSTRACE_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / command;
}

fs::path prepare_out(const std::string& out, const std::string& command) {
  fs::path dir = out.empty() ? default_out(command) : fs::path(out);
  fs::create_directories(dir);
  return dir;
}

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (auto piece : split(s, ',')) {
    const auto v = parse_double(trim(piece));
    if (!v) throw ValidationError(what + ": bad number '" + std::string(piece) + "'");
    out.push_back(*v);
  }
  return out;
}

/// Sampler overrides shared by fit, evaluate and replicate.
struct SamplerFlags {
  std::optional<std::uint64_t> seed;
  std::optional<long> iterations, burn_in, window;
  std::optional<double> tau;
  std::optional<int> m_metropolis;
  std::optional<unsigned> threads;
  std::string prior, weights;

  void add(CLI::App* app) {
    app->add_option("--seed", seed, "Random seed (overrides the config)");
    app->add_option("--iterations", iterations, "MCMC iterations");
    app->add_option("--burn-in", burn_in, "Iterations discarded as burn-in");
    app->add_option("--tau", tau, "Proposal scale");
    app->add_option("--m-metropolis", m_metropolis, "Metropolis steps per block and iteration");
    app->add_option("--threads", threads, "Worker threads for the imputation step");
    app->add_option("--prior", prior, "flat | gaussian:<sigma>");
    app->add_option("--weights", weights, "uniform | modular:<w>");
    app->add_option("--window", window, "Trailing window for imputation frequencies");
  }

  void apply(RunConfig& c) const {
    if (seed) {
      c.seed = *seed;
      c.sampler.seed = *seed;
      if (c.dgp) c.dgp->seed = *seed;
    }
    if (iterations) c.sampler.iterations = *iterations;
    if (burn_in) c.sampler.burn_in = *burn_in;
    if (window) c.sampler.window = *window;
    if (tau) c.sampler.tau = *tau;
    if (m_metropolis) c.sampler.m_metropolis = *m_metropolis;
    if (threads) c.sampler.threads = *threads;
    if (!prior.empty()) c.sampler.prior = parse_prior(prior);
    if (!weights.empty()) c.sampler.weights = parse_weights(weights);
    c.sampler.validate();
  }
};

/// Config identity for checkpoints: everything that changes results.
std::string config_fingerprint(const RunConfig& c, const std::string& panel_hash) {
  Json j = run_config_to_json(c);
  j["sampler"].erase("threads");
  return sha256_hex(j.dump() + panel_hash);
}

Json acceptance_json(const PosteriorDraws& d) {
  Json a, f;
  for (Block b : kBlocks) {
    if (!d.sampled[static_cast<std::size_t>(b)]) continue;
    a[block_name(b)] = d.acceptance_rate(b);
    f[block_name(b)] = d.mle_failures[static_cast<std::size_t>(b)];
  }
  return {{"acceptance_rates", a}, {"mle_failures", f}};
}

Json base_manifest(const std::string& command, const std::vector<std::string>& args) {
  Json m;
  m["command"] = command;
  m["arguments"] = args;
  m["version"] = kVersion;
  return m;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config, out, format = "csv";
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimulateArgs& a, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = load_run_config(a.config);
  if (!cfg.dgp) throw ValidationError(a.config + ": simulate needs a 'dgp' section");
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.dgp->seed = *a.seed;
    cfg.sampler.seed = *a.seed;
  }
  if (a.format != "csv" && a.format != "jsonl") throw ValidationError("--format must be csv or jsonl");
  const fs::path dir = prepare_out(a.out, "simulate");
  const SimulatedPanel sim = simulate_panel(*cfg.dgp);

  const std::string panel_name = "panel." + a.format;
  save_panel(sim.panel, (dir / panel_name).string());
  Json truth;
  Json states = Json::object();
  for (std::size_t i = 0; i < sim.true_states.size(); ++i) {
    std::string bits;
    for (auto x : sim.true_states[i]) bits.push_back(x ? '1' : '0');
    states[sim.panel.individuals[i].id] = bits;
  }
  truth["states"] = states;
  if (cfg.has_truth()) truth["coefficients"] = run_config_to_json(cfg)["truth"];
  write_file(dir / "truth.json", truth.dump(1) + "\n");
  write_file(dir / "config.json", run_config_to_json(cfg).dump(2) + "\n");

  long observed = 0;
  for (const auto& rec : sim.panel.individuals) observed += rec.any_observed();
  Json m = base_manifest("simulate", argv);
  m["config"] = run_config_to_json(cfg);
  m["seed"] = cfg.seed;
  m["inputs"] = {{a.config, file_hash(a.config)}};
  m["individuals"] = sim.panel.individuals.size();
  m["individuals_with_observed_states"] = observed;
  m["outputs"] = {panel_name, "truth.json", "config.json"};
  m["output_hashes"] = {{panel_name, file_hash((dir / panel_name).string())}};
  m["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  std::cout << "simulated " << sim.panel.individuals.size() << " individuals (" << observed
            << " with observed states) into " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string panel, config, out;
  bool resume = false;
  long checkpoint_every = 500;
  SamplerFlags flags;
};

void write_imputation(const fs::path& path, const PanelData& panel, const PosteriorDraws& d) {
  std::ostringstream out;
  out << "id,t,x_observed,p_private\n";
  const auto offsets = cell_offsets(panel);
  for (std::size_t i = 0; i < panel.individuals.size(); ++i) {
    const auto& rec = panel.individuals[i];
    for (std::size_t o = 0; o < rec.length(); ++o) {
      const double p = d.window_iterations ? static_cast<double>(d.private_counts[offsets[i] + o]) /
                                                 static_cast<double>(d.window_iterations)
                                           : 0.0;
      out << rec.id << ',' << rec.t_min + static_cast<long>(o) << ','
          << (rec.states[o] ? std::to_string(*rec.states[o]) : "NA") << ',' << format_double(p) << '\n';
    }
  }
  write_file(path, out.str());
}

int cmd_fit(const FitArgs& a, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = load_run_config(a.config);
  a.flags.apply(cfg);
  const PanelData panel = load_panel(a.panel);
  const std::string panel_hash = file_hash(a.panel);
  const std::string fingerprint = config_fingerprint(cfg, panel_hash);
  const fs::path dir = prepare_out(a.out, "fit");
  const fs::path ckpt = dir / "checkpoint.json";

  std::optional<Chain> chain;
  if (a.resume) {
    if (!fs::exists(ckpt)) throw ValidationError("--resume: no checkpoint in " + dir.string());
    const Json j = Json::parse(read_text_file(ckpt.string()));
    if (j.value("fingerprint", std::string()) != fingerprint)
      throw ValidationError("--resume: checkpoint was written for a different panel or configuration");
    chain.emplace(Chain::restore(panel, cfg.design, cfg.sampler, nlohmann::json::parse(j.at("state").dump())));
    std::cout << "resuming at iteration " << chain->iteration() << "\n";
  } else {
    chain.emplace(panel, cfg.design, cfg.sampler);
  }
  for (const auto& w : chain->draws().warnings) std::cerr << "warning: " << w << "\n";

  auto save_checkpoint = [&] {
    Json j;
    j["fingerprint"] = fingerprint;
    j["state"] = Json::parse(chain->checkpoint().dump());
    write_file(ckpt, j.dump() + "\n");
  };
  const long every = a.checkpoint_every > 0 ? a.checkpoint_every : cfg.sampler.iterations;
  while (chain->iteration() < cfg.sampler.iterations) {
    const long next = std::min(cfg.sampler.iterations, (chain->iteration() / every + 1) * every);
    chain->run_until(next);
    save_checkpoint();
  }

  const PosteriorDraws& d = chain->draws();
  {
    std::ostringstream s;
    write_draws_csv(d, s);
    write_file(dir / "draws.csv", s.str());
  }
  const SummaryTable summary = summarize(d);
  write_file(dir / "summary.txt", summary_text(summary));
  write_file(dir / "summary.json", summary_json(summary).dump(2) + "\n");
  write_imputation(dir / "imputation.csv", panel, d);
  for (const auto& w : summary.warnings) std::cerr << "warning: " << w << "\n";

  Json m = base_manifest("fit", argv);
  m["config"] = run_config_to_json(cfg);
  m["seed"] = cfg.sampler.seed;
  m["prior"] = cfg.sampler.prior.describe();
  m["config_hash"] = fingerprint;
  m["inputs"] = {{a.panel, panel_hash}, {a.config, file_hash(a.config)}};
  m["columns"] = d.columns;
  m.update(acceptance_json(d));
  m["warnings"] = d.warnings;
  m["outputs"] = {"draws.csv", "summary.txt", "summary.json", "imputation.csv", "checkpoint.json"};
  m["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  std::cout << summary_text(summary);
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string panel, out, baseline, phi;
  std::vector<std::string> configs;
  std::optional<double> holdout;
  SamplerFlags flags;
};

int cmd_evaluate(const EvaluateArgs& a, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  if (a.baseline != "" && a.baseline != "no-traces") throw ValidationError("--baseline accepts only 'no-traces'");
  const PanelData panel = load_panel(a.panel);
  std::vector<RunConfig> configs;
  for (const auto& path : a.configs) {
    configs.push_back(load_run_config(path));
    a.flags.apply(configs.back());
  }
  const RunConfig& first = configs.front();
  const double fraction = a.holdout ? *a.holdout : first.holdout ? first.holdout->fraction : 0.2;
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("--holdout must lie in (0, 1)");
  const HoldoutPlan plan = make_holdout_plan(panel, fraction, first.holdout_seed());
  if (plan.excluded.empty()) throw ValidationError("hold-out selects no individual");
  const std::vector<double> phis = a.phi.empty() ? std::vector<double>{} : parse_double_list(a.phi, "--phi");

  struct Model {
    std::string name;
    DesignConfig design;
    SamplerConfig sampler;
  };
  std::vector<Model> models;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    const std::string base = fs::path(a.configs[k]).stem().string();
    if (phis.empty()) {
      models.push_back({base, configs[k].design, configs[k].sampler});
    } else {
      const auto& dc = configs[k].design;
      bool reads_phi = false;
      for (const auto* terms : {&dc.beta0, &dc.beta1, &dc.eta0})
        for (const auto& t : *terms) reads_phi = reads_phi || t.find("A(phi)") != std::string::npos;
      if (!reads_phi)
        throw ValidationError("--phi given but no term of '" + a.configs[k] + "' uses A(phi)");
      for (double phi : phis) {
        DesignConfig d = configs[k].design;
        d.phi = phi;
        models.push_back({base + " phi=" + format_double(phi), d, configs[k].sampler});
      }
    }
  }
  if (a.baseline == "no-traces") {
    SamplerConfig s = first.sampler;
    s.ignore_traces = true;
    models.push_back({"no-traces baseline", first.design, s});
  }

  const fs::path dir = prepare_out(a.out, "evaluate");
  std::ostringstream cells, table;
  cells << "model,id,t,x_observed,p_private,loss\n";
  Json rows = Json::array();
  std::size_t name_w = 5;
  for (const auto& m : models) name_w = std::max(name_w, m.name.size());
  table << std::left << std::setw(static_cast<int>(name_w)) << "model" << "  " << std::right << std::setw(10)
        << "mean_loss" << "  " << std::setw(7) << "cells" << "\n";
  for (const auto& m : models) {
    std::cerr << "evaluating " << m.name << "\n";
    LossReport r = holdout_evaluate(panel, plan, m.design, m.sampler);
    r.model = m.name;
    for (const auto& c : r.cells)
      cells << m.name << ',' << c.id << ',' << c.t << ',' << c.observed << ',' << format_double(c.predicted) << ','
            << format_double(c.loss) << '\n';
    const auto mean = r.mean();
    table << std::left << std::setw(static_cast<int>(name_w)) << m.name << "  " << std::right << std::setw(10)
          << (mean ? detail::fixed(*mean, 4) : "NA") << "  " << std::setw(7) << r.cells.size() << "\n";
    rows.push_back({{"model", m.name},
                    {"mean_loss", mean ? Json(*mean) : Json(nullptr)},
                    {"cells", r.cells.size()},
                    {"design", design_to_json(m.design)},
                    {"ignore_traces", m.sampler.ignore_traces}});
  }
  write_file(dir / "losses.csv", cells.str());
  write_file(dir / "loss_table.txt", table.str());
  write_file(dir / "loss_table.json", Json({{"holdout", plan.excluded}, {"models", rows}}).dump(2) + "\n");

  Json m = base_manifest("evaluate", argv);
  Json cfgs = Json::array();
  for (const auto& c : configs) cfgs.push_back(run_config_to_json(c));
  m["configs"] = cfgs;
  m["seed"] = first.sampler.seed;
  m["holdout_fraction"] = fraction;
  m["holdout_seed"] = first.holdout_seed();
  Json inputs = {{a.panel, file_hash(a.panel)}};
  for (const auto& p : a.configs) inputs[p] = file_hash(p);
  m["inputs"] = inputs;
  m["outputs"] = {"losses.csv", "loss_table.txt", "loss_table.json"};
  m["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  std::cout << table.str();
  return 0;
}

// ---------------------------------------------------------------------------

struct DiagnoseArgs {
  std::string run, draws, out;
  std::optional<long> burn_in;
  std::string quantiles = "0.05,0.5,0.95";
};

PosteriorDraws load_run_draws(const std::string& run, const std::string& draws_path, std::optional<long> burn_in) {
  long b = 0;
  std::string path = draws_path;
  if (!run.empty()) {
    const Json m = Json::parse(read_text_file((fs::path(run) / "manifest.json").string()));
    b = m.at("config").at("sampler").at("burn_in").get<long>();
    if (path.empty()) path = (fs::path(run) / "draws.csv").string();
  }
  if (burn_in) b = *burn_in;
  if (path.empty()) throw ValidationError("give --run or --draws");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open draws file '" + path + "'");
  return read_draws_csv(in, b);
}

int cmd_diagnose(const DiagnoseArgs& a, const std::vector<std::string>& argv) {
  const PosteriorDraws d = load_run_draws(a.run, a.draws, a.burn_in);
  const SummaryTable summary = summarize(d, parse_double_list(a.quantiles, "--quantiles"));
  const fs::path dir = prepare_out(a.out.empty() && !a.run.empty() ? a.run + "/diagnose" : a.out, "diagnose");
  write_file(dir / "summary.txt", summary_text(summary));
  write_file(dir / "summary.json", summary_json(summary).dump(2) + "\n");
  Json m = base_manifest("diagnose", argv);
  m["burn_in"] = d.burn_in;
  m["iterations"] = d.iterations();
  m["outputs"] = {"summary.txt", "summary.json"};
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  std::cout << summary_text(summary);
  return 0;
}

// ---------------------------------------------------------------------------

struct ReplicateArgs {
  int experiment = 1;
  std::string out, seeds = "1,2,3,4,5";
  long iterations = 5000, burn_in = 200;
  unsigned threads = 1;
};

Json chain_json(const ChainReport& r) {
  Json iv = Json::array();
  for (const auto& c : r.intervals)
    iv.push_back({{"block", c.block},
                  {"coefficient", c.name},
                  {"q05", c.lo},
                  {"q95", c.hi},
                  {"truth", c.truth ? Json(*c.truth) : Json(nullptr)},
                  {"contains", c.contains()}});
  return {{"arm", r.label},      {"seed", r.seed},          {"intervals", iv},
          {"min_ess", r.min_ess()}, {"max_rhat", r.max_rhat()}, {"summary", summary_json(r.summary)}};
}

int cmd_replicate(const ReplicateArgs& a, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  ReplicateOptions opt;
  opt.seeds.clear();
  for (double s : parse_double_list(a.seeds, "--seeds")) {
    if (s < 0 || s != std::floor(s)) throw ValidationError("--seeds takes nonnegative integers");
    opt.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (opt.seeds.empty()) throw ValidationError("--seeds is empty");
  opt.iterations = a.iterations;
  opt.burn_in = a.burn_in;
  opt.threads = a.threads;
  opt.progress = [](const std::string& msg) { std::cerr << msg << "\n"; };
  const fs::path dir = prepare_out(a.out, "replicate");
  std::string text;
  Json report;
  bool pass = false;
  if (a.experiment == 1) {
    const auto rep = run_experiment1(opt);
    text = rep.text();
    pass = rep.pass();
    Json arms = Json::array();
    for (const auto& c : rep.cases)
      for (const auto& r : c) arms.push_back(chain_json(r));
    report = {{"experiment", 1},
              {"chains", arms},
              {"flags",
               {{"case2_contains", rep.case2_contains},
                {"case3_contains", rep.case3_contains},
                {"case3_narrower", rep.narrower},
                {"pass", pass}}}};
  } else if (a.experiment == 2) {
    const auto rep = run_experiment2(opt);
    text = rep.text();
    pass = rep.pass();
    Json arms = Json::array();
    for (const auto& r : rep.well) arms.push_back(chain_json(r));
    for (const auto& r : rep.mis) arms.push_back(chain_json(r));
    report = {{"experiment", 2},
              {"chains", arms},
              {"flags",
               {{"well_contains", rep.well_contains},
                {"mis_age_excludes", rep.mis_age_excludes},
                {"mis_lambda_above", rep.mis_lambda_above},
                {"mis_both", rep.mis_both},
                {"pass", pass}}}};
  } else {
    throw ValidationError("--experiment must be 1 or 2");
  }
  write_file(dir / "report.txt", text);
  write_file(dir / "report.json", report.dump(2) + "\n");
  Json m = base_manifest("replicate", argv);
  m["experiment"] = a.experiment;
  m["seeds"] = opt.seeds;
  m["iterations"] = opt.iterations;
  m["burn_in"] = opt.burn_in;
  m["outputs"] = {"report.txt", "report.json"};
  m["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  std::cout << text;
  return 0;
}

// ---------------------------------------------------------------------------

struct ValidateArgs {
  std::string config, panel;
};

int cmd_validate_config(const ValidateArgs& a) {
  const RunConfig cfg = load_run_config(a.config);
  std::cout << run_config_to_json(cfg).dump(2) << "\n";
  const ResolvedDesign rd = resolve_design(cfg.design);
  for (Block b : kBlocks) {
    std::cout << block_name(b) << ":";
    for (const auto& c : rd.block(b).columns) std::cout << " " << c;
    std::cout << "\n";
  }
  if (!a.panel.empty()) {
    const PanelData panel = load_panel(a.panel);
    const Designs d = assemble_designs(panel, cfg.design);
    std::cout << "panel: " << panel.individuals.size() << " individuals, " << d.cells() << " cells\n";
    for (const auto& w : d.warnings) std::cout << "warning: " << w << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct PlotArgs {
  std::string run, out, block = "beta0", covariate = "age", grid = "0:1:51";
  std::vector<std::string> sets;
  long t = 1;
  int bins = 40;
};

int cmd_plot_data(const PlotArgs& a, const std::vector<std::string>& argv) {
  const Json manifest = Json::parse(read_text_file((fs::path(a.run) / "manifest.json").string()));
  const RunConfig cfg = run_config_from_json(manifest.at("config"));
  const PosteriorDraws d = load_run_draws(a.run, "", std::nullopt);
  const Block block = block_from_name(a.block);

  const auto g = split(a.grid, ':');
  if (g.size() != 3) throw ValidationError("--grid expects lo:hi:points");
  const auto lo = parse_double(g[0]), hi = parse_double(g[1]);
  const auto points = parse_long(g[2]);
  if (!lo || !hi || !points || *points < 2 || !(*hi > *lo)) throw ValidationError("--grid expects lo:hi:points");

  std::vector<std::string> names{a.covariate};
  std::vector<double> fixed{0.0};
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    const auto v = eq == std::string::npos ? std::nullopt : parse_double(std::string_view(s).substr(eq + 1));
    if (!v) throw ValidationError("--set expects name=value");
    names.push_back(s.substr(0, eq));
    fixed.push_back(*v);
  }
  const ResolvedDesign rd = resolve_design(cfg.design);
  TermEvaluator eval(rd.block(block).terms, names);
  // Trace terms are read for an individual with no traces so far.
  TraceHistory history(eval.decay_parameters());
  RowMatrix rows(*points, eval.width());
  std::vector<double> xs;
  for (long k = 0; k < *points; ++k) {
    const double x = *lo + (*hi - *lo) * static_cast<double>(k) / static_cast<double>(*points - 1);
    xs.push_back(x);
    fixed[0] = x;
    const CellContext ctx{"grid", a.t, fixed, &history, &cfg.design.election_points};
    std::span<double> row(rows.data() + k * eval.width(), static_cast<std::size_t>(eval.width()));
    eval.evaluate(ctx, row);
  }
  const auto curve = marginal_probability_curve(d, block, xs, rows);

  const fs::path dir = prepare_out(a.out.empty() ? a.run + "/plot" : a.out, "plot-data");
  std::ostringstream c;
  c << a.covariate << ",median,lo,hi\n";
  for (const auto& p : curve)
    c << format_double(p.x) << ',' << format_double(p.median) << ',' << format_double(p.lo) << ','
      << format_double(p.hi) << '\n';
  write_file(dir / "curve.csv", c.str());

  std::ostringstream h;
  h << "block,coefficient,bin_lo,bin_hi,density\n";
  for (Block b : kBlocks) {
    const auto bi = static_cast<std::size_t>(b);
    if (!d.sampled[bi]) continue;
    const Eigen::MatrixXd m = d.block_draws(b, true);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const Eigen::VectorXd col = m.col(j);
      for (const auto& bin : histogram(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), a.bins))
        h << block_name(b) << ',' << d.columns[bi][static_cast<std::size_t>(j)] << ',' << format_double(bin.lo) << ','
          << format_double(bin.hi) << ',' << format_double(bin.density) << '\n';
    }
  }
  write_file(dir / "histograms.csv", h.str());
  Json m = base_manifest("plot-data", argv);
  m["outputs"] = {"curve.csv", "histograms.csv"};
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  std::cout << "wrote " << (dir / "curve.csv").string() << " and " << (dir / "histograms.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian Markov switching models with trace emissions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  const std::vector<std::string> args(argv + 1, argv + argc);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Simulate a synthetic panel from a config's dgp section");
  s->add_option("--config", sim.config, "Run configuration (JSON)")->required();
  s->add_option("--out", sim.out, "Output directory");
  s->add_option("--seed", sim.seed, "Random seed (overrides the config)");
  s->add_option("--format", sim.format, "Panel format: csv or jsonl");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Run the sampler on a panel");
  f->add_option("--panel", fit.panel, "Panel file (.csv or .jsonl)")->required();
  f->add_option("--config", fit.config, "Run configuration (JSON)")->required();
  f->add_option("--out", fit.out, "Output directory");
  f->add_flag("--resume", fit.resume, "Continue from the checkpoint in the output directory");
  f->add_option("--checkpoint-every", fit.checkpoint_every, "Iterations between checkpoints");
  fit.flags.add(f);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Hold-out reconstruction loss for one or more models");
  e->add_option("--panel", ev.panel, "Panel file")->required();
  e->add_option("--config", ev.configs, "Run configuration; repeat to compare models")->required();
  e->add_option("--out", ev.out, "Output directory");
  e->add_option("--holdout", ev.holdout, "Fraction of individuals with observed states to withhold");
  e->add_option("--baseline", ev.baseline, "Add a baseline model: no-traces");
  e->add_option("--phi", ev.phi, "Comma-separated decay values to sweep");
  ev.flags.add(e);

  DiagnoseArgs dg;
  auto* d = app.add_subcommand("diagnose", "Summaries and convergence diagnostics from stored draws");
  d->add_option("--run", dg.run, "Output directory of a fit");
  d->add_option("--draws", dg.draws, "Draws file");
  d->add_option("--burn-in", dg.burn_in, "Burn-in to discard");
  d->add_option("--quantiles", dg.quantiles, "Comma-separated quantile levels");
  d->add_option("--out", dg.out, "Output directory");

  ReplicateArgs rp;
  auto* r = app.add_subcommand("replicate", "Run a synthetic experiment end to end");
  r->add_option("--experiment", rp.experiment, "1 or 2")->required();
  r->add_option("--out", rp.out, "Output directory");
  r->add_option("--seeds", rp.seeds, "Comma-separated seeds");
  r->add_option("--iterations", rp.iterations, "MCMC iterations per chain");
  r->add_option("--burn-in", rp.burn_in, "Burn-in per chain");
  r->add_option("--threads", rp.threads, "Worker threads");

  ValidateArgs va;
  auto* v = app.add_subcommand("validate-config", "Check a config and print the resolved design columns");
  v->add_option("--config", va.config, "Run configuration")->required();
  v->add_option("--panel", va.panel, "Also assemble the design on this panel");

  PlotArgs pl;
  auto* p = app.add_subcommand("plot-data", "Emit curve and histogram data from a fit");
  p->add_option("--run", pl.run, "Output directory of a fit")->required();
  p->add_option("--block", pl.block, "beta0, beta1 or eta0");
  p->add_option("--covariate", pl.covariate, "Covariate varied along the curve");
  p->add_option("--grid", pl.grid, "lo:hi:points");
  p->add_option("--set", pl.sets, "Fixed covariate values, name=value");
  p->add_option("--t", pl.t, "Time index used by election terms");
  p->add_option("--bins", pl.bins, "Histogram bins");
  p->add_option("--out", pl.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s) return cmd_simulate(sim, args);
    if (*f) return cmd_fit(fit, args);
    if (*e) return cmd_evaluate(ev, args);
    if (*d) return cmd_diagnose(dg, args);
    if (*r) return cmd_replicate(rp, args);
    if (*v) return cmd_validate_config(va);
    if (*p) return cmd_plot_data(pl, args);
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& err) {
    std::cerr << "error: malformed JSON input: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
