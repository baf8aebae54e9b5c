#pragma once

// Panel file formats.
//
// Columnar text (.csv): header `id,t,x,y[,covariate...]`, one row per
// (individual, t). Rows of an individual are contiguous with t increasing by
// one; x is 0, 1 or NA; y is 0 or 1; covariates are decimal reals written in
// shortest round-trip form.
//
// Structured records (.jsonl): one JSON object per individual,
// {"id": ..., "t_min": ..., "x": [0, null, 1, ...], "y": [...],
//  "covariates": {"name": [...], ...}} with covariates in column order.

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mstrace/error.hpp"
#include "mstrace/panel.hpp"
#include "mstrace/text.hpp"

namespace mstrace {

inline std::string panel_to_csv(const PanelData& panel) {
  std::string out = "id,t,x,y";
  for (const auto& name : panel.covariate_names) out += "," + name;
  out += "\n";
  for (const auto& rec : panel.individuals) {
    for (std::size_t o = 0; o < rec.length(); ++o) {
      out += rec.id;
      out += ",";
      out += std::to_string(rec.t_min + static_cast<long>(o));
      out += ",";
      out += rec.states[o] ? std::to_string(*rec.states[o]) : "NA";
      out += ",";
      out += std::to_string(rec.traces[o]);
      for (const auto& col : rec.covariates) out += "," + format_double(col[o]);
      out += "\n";
    }
  }
  return out;
}

inline PanelData panel_from_csv(std::istream& in) {
  PanelData panel;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw ValidationError("panel line " + std::to_string(line_no) + ": " + msg);
  };
  if (!std::getline(in, line)) throw ValidationError("panel file is empty");
  ++line_no;
  const auto header = split(trim(line), ',');
  if (header.size() < 4 || header[0] != "id" || header[1] != "t" || header[2] != "x" ||
      header[3] != "y")
    fail("header must start with id,t,x,y");
  for (std::size_t k = 4; k < header.size(); ++k) panel.covariate_names.emplace_back(header[k]);
  const std::size_t ncov = panel.covariate_names.size();

  std::unordered_set<std::string> closed;
  IndividualRecord* current = nullptr;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto fields = split(body, ',');
    if (fields.size() != 4 + ncov)
      fail("expected " + std::to_string(4 + ncov) + " fields, got " + std::to_string(fields.size()));
    const std::string id(fields[0]);
    if (id.empty()) fail("empty id");
    const auto t = parse_long(fields[1]);
    if (!t) fail("bad time index '" + std::string(fields[1]) + "'");

    if (!current || current->id != id) {
      if (current) closed.insert(current->id);
      if (closed.count(id)) fail("rows of individual '" + id + "' are not contiguous");
      panel.individuals.push_back({});
      current = &panel.individuals.back();
      current->id = id;
      current->t_min = *t;
      current->covariates.resize(ncov);
    } else if (*t != current->t_max() + 1) {
      fail("time index must increase by one within an individual" + at_cell(id, *t));
    }

    StateCell state;
    if (fields[2] == "0") state = kPublic;
    else if (fields[2] == "1") state = kPrivate;
    else if (fields[2] != "NA") fail("x must be 0, 1 or NA" + at_cell(id, *t));
    std::uint8_t trace = 0;
    if (fields[3] == "1") trace = 1;
    else if (fields[3] != "0") fail("y must be 0 or 1 (traces are never missing)" + at_cell(id, *t));

    current->states.push_back(state);
    current->traces.push_back(trace);
    for (std::size_t k = 0; k < ncov; ++k) {
      const auto v = parse_double(fields[4 + k]);
      if (!v) fail("bad covariate value '" + std::string(fields[4 + k]) + "'" + at_cell(id, *t));
      current->covariates[k].push_back(*v);
    }
  }
  panel.validate();
  return panel;
}

inline std::string panel_to_jsonl(const PanelData& panel) {
  std::string out;
  for (const auto& rec : panel.individuals) {
    nlohmann::ordered_json j;
    j["id"] = rec.id;
    j["t_min"] = rec.t_min;
    auto xs = nlohmann::ordered_json::array();
    for (const auto& s : rec.states) xs.push_back(s ? nlohmann::ordered_json(*s) : nlohmann::ordered_json());
    j["x"] = std::move(xs);
    j["y"] = rec.traces;
    nlohmann::ordered_json cov = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < panel.covariate_names.size(); ++k)
      cov[panel.covariate_names[k]] = rec.covariates[k];
    j["covariates"] = std::move(cov);
    out += j.dump();
    out += "\n";
  }
  return out;
}

inline PanelData panel_from_jsonl(std::istream& in) {
  PanelData panel;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "panel record line " + std::to_string(line_no) + ": ";
    try {
      const auto j = nlohmann::ordered_json::parse(line);
      IndividualRecord rec;
      rec.id = j.at("id").get<std::string>();
      rec.t_min = j.at("t_min").get<long>();
      for (const auto& x : j.at("x")) {
        if (x.is_null()) rec.states.emplace_back();
        else rec.states.emplace_back(x.get<std::uint8_t>());
      }
      rec.traces = j.at("y").get<std::vector<std::uint8_t>>();
      std::vector<std::string> names;
      for (const auto& [name, values] : j.at("covariates").items()) {
        names.push_back(name);
        rec.covariates.push_back(values.get<std::vector<double>>());
      }
      if (first) {
        panel.covariate_names = names;
        first = false;
      } else if (names != panel.covariate_names) {
        throw ValidationError(where + "covariate columns differ from the first record");
      }
      panel.individuals.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + e.what());
    }
  }
  panel.validate();
  return panel;
}

inline bool is_jsonl_path(const std::string& path) {
  return path.size() >= 6 && (path.ends_with(".jsonl") || path.ends_with(".json"));
}

inline PanelData load_panel(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open panel file '" + path + "'");
  return is_jsonl_path(path) ? panel_from_jsonl(in) : panel_from_csv(in);
}

inline void save_panel(const PanelData& panel, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write panel file '" + path + "'");
  out << (is_jsonl_path(path) ? panel_to_jsonl(panel) : panel_to_csv(panel));
}

}  // namespace mstrace
