#pragma once

// Persisted chain output.
//
// Draws file: CSV with header "iteration,block,coefficient,value", one row
// per (iteration, coefficient), iterations starting at 1 and including the
// burn-in. Values use shortest round-trip formatting, so reading the file
// back reproduces the draws bit for bit.

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mstrace/config.hpp"
#include "mstrace/diagnostics.hpp"
#include "mstrace/error.hpp"
#include "mstrace/sampler.hpp"
#include "mstrace/text.hpp"

namespace mstrace {

inline void write_draws_csv(const PosteriorDraws& draws, std::ostream& out) {
  out << "iteration,block,coefficient,value\n";
  for (long k = 0; k < draws.iterations(); ++k) {
    const auto& ps = draws.params[static_cast<std::size_t>(k)];
    for (Block b : kBlocks) {
      const auto bi = static_cast<std::size_t>(b);
      if (!draws.sampled[bi]) continue;
      const auto& v = ps.block(b);
      for (Eigen::Index j = 0; j < v.size(); ++j)
        out << k + 1 << ',' << block_name(b) << ',' << draws.columns[bi][static_cast<std::size_t>(j)] << ','
            << format_double(v[j]) << '\n';
    }
  }
}

/// Reads a draws file. Coefficient names may contain commas (spline
/// arguments), so the value is taken after the last comma and the block
/// after the first two.
inline PosteriorDraws read_draws_csv(std::istream& in, long burn_in) {
  PosteriorDraws d;
  d.burn_in = burn_in;
  d.sampled = {false, false, false};
  std::string line;
  if (!std::getline(in, line) || trim(line) != "iteration,block,coefficient,value")
    throw ValidationError("draws file: line 1: expected header 'iteration,block,coefficient,value'");
  std::array<std::vector<std::vector<double>>, 3> values;  // [block][iteration][coef]
  long line_no = 1;
  long current = 0;
  bool first_iteration_done = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = "draws file: line " + std::to_string(line_no) + ": ";
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    const auto c3 = line.rfind(',');
    if (c2 == std::string::npos || c3 <= c2) throw ValidationError(where + "expected 4 fields");
    const auto it = parse_long(line.substr(0, c1));
    const Block b = block_from_name(line.substr(c1 + 1, c2 - c1 - 1));
    const std::string name = line.substr(c2 + 1, c3 - c2 - 1);
    const auto value = parse_double(line.substr(c3 + 1));
    if (!it || !value) throw ValidationError(where + "bad iteration or value");
    if (*it != current) {
      if (*it != current + 1) throw ValidationError(where + "iterations must be consecutive from 1");
      if (current >= 1) first_iteration_done = true;
      current = *it;
      for (auto& v : values) v.emplace_back();
    }
    const auto bi = static_cast<std::size_t>(b);
    if (!first_iteration_done) {
      d.sampled[bi] = true;
      d.columns[bi].push_back(name);
    } else if (values[bi].back().size() >= d.columns[bi].size() || d.columns[bi][values[bi].back().size()] != name) {
      throw ValidationError(where + "coefficient '" + name + "' out of order");
    }
    values[bi].back().push_back(*value);
  }
  for (long k = 0; k < current; ++k) {
    ParameterSet ps;
    for (Block b : kBlocks) {
      const auto bi = static_cast<std::size_t>(b);
      const auto& row = values[bi][static_cast<std::size_t>(k)];
      if (row.size() != d.columns[bi].size())
        throw ValidationError("draws file: iteration " + std::to_string(k + 1) + " is incomplete");
      ps.block(b) = Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
    }
    d.params.push_back(std::move(ps));
  }
  if (burn_in >= d.iterations()) throw ValidationError("burn-in covers every stored draw");
  return d;
}

namespace detail {
inline std::string fixed(double v, int digits = 3) {
  if (std::isnan(v)) return "NA";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}
}  // namespace detail

/// Aligned text table with quantiles, mean, ESS and split R-hat.
inline std::string summary_text(const SummaryTable& t) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> head{"block", "coefficient"};
  for (double q : t.levels) head.push_back("q" + format_double(q * 100));
  head.insert(head.end(), {"mean", "ESS", "Rhat"});
  cells.push_back(head);
  for (const auto& r : t.rows) {
    std::vector<std::string> row{r.block, r.name};
    for (double q : r.quantiles) row.push_back(detail::fixed(q));
    row.push_back(detail::fixed(r.mean));
    row.push_back(detail::fixed(r.ess, 0));
    row.push_back(detail::fixed(r.rhat, 4));
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells)
    for (std::size_t k = 0; k < row.size(); ++k) width[k] = std::max(width[k], row[k].size());
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k) out << "  ";
      if (k < 2) out << std::left << std::setw(static_cast<int>(width[k])) << row[k];
      else out << std::right << std::setw(static_cast<int>(width[k])) << row[k];
    }
    out << '\n';
  }
  for (const auto& w : t.warnings) out << "warning: " << w << '\n';
  return out.str();
}

inline Json summary_json(const SummaryTable& t) {
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    Json q = Json::object(), odds = Json::object();
    for (std::size_t k = 0; k < t.levels.size(); ++k) {
      q[format_double(t.levels[k])] = r.quantiles[k];
      odds[format_double(t.levels[k])] = r.odds_ratio[k];
    }
    rows.push_back({{"block", r.block},
                    {"coefficient", r.name},
                    {"quantiles", q},
                    {"odds_ratio", odds},
                    {"mean", r.mean},
                    {"ess", std::isnan(r.ess) ? Json(nullptr) : Json(r.ess)},
                    {"rhat", std::isnan(r.rhat) ? Json(nullptr) : Json(r.rhat)}});
  }
  return {{"coefficients", rows}, {"warnings", t.warnings}};
}

}  // namespace mstrace
