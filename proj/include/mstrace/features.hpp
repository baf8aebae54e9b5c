#pragma once

// Design-row assembly for the transition (W) and emission (W~) GLMs.
//
// Term grammar, one string per term:
//   1 | intercept             constant column
//   <name>                    raw covariate column
//   scaled(<name>,lo=a,hi=b)  (x - a) / (b - a)
//   spline(<name>,df=5,degree=2[,lo=0,hi=1])
//                             clamped B-spline basis with equally spaced
//                             interior knots; df columns, intercept included
//   I(<name>=v)               indicator that a covariate equals v
//   election | election(lead=k)
//                             1 when t+k or t+k+1 is an election time point
//   A(phi) | A(<number>)      exponentially weighted average of past traces
//   L                         sqrt(periods since the last trace - 1)
//   I(A1=0)                   no trace yet observed on the span
//   a:b                       interaction (column-wise product) of two factors
//
// A, L and I(A1=0) read the trace history and are emission-only unless the
// config explicitly allows them in transitions.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mstrace/error.hpp"
#include "mstrace/panel.hpp"
#include "mstrace/text.hpp"

namespace mstrace {

// ---------------------------------------------------------------------------
// Trace-history encodings

/// A(phi) over a history given most-recent-first. Empty history gives 0.
inline double decay_average(std::span<const std::uint8_t> history, double phi) {
  if (!(phi > 0.0 && phi <= 1.0)) throw ValidationError("decay parameter phi must lie in (0, 1]");
  double num = 0.0, den = 0.0, w = 1.0;
  for (const auto h : history) {
    w *= phi;
    num += w * h;
    den += w;
  }
  return den > 0.0 ? num / den : 0.0;
}

/// L = sqrt(p - 1) where p is the offset of the most recent trace in a
/// most-recent-first history; 0 when there is no trace.
inline double last_trace_gap(std::span<const std::uint8_t> history) {
  for (std::size_t p = 0; p < history.size(); ++p)
    if (history[p]) return std::sqrt(static_cast<double>(p));
  return 0.0;
}

/// Running trace history for forward (time-ordered) feature computation.
class TraceHistory {
 public:
  explicit TraceHistory(std::vector<double> phis = {}) : phis_(std::move(phis)) {
    num_.assign(phis_.size(), 0.0);
    den_.assign(phis_.size(), 0.0);
  }

  /// `restarts_gap` marks a zeroed membership trace: it is invisible to A and
  /// I(A1=0) but L still counts periods from it.
  void push(std::uint8_t y, bool restarts_gap = false) {
    for (std::size_t k = 0; k < phis_.size(); ++k) {
      num_[k] = phis_[k] * (y + num_[k]);
      den_[k] = phis_[k] * (1.0 + den_[k]);
    }
    if (y) ++ones_;
    if (y || restarts_gap) last_one_ = static_cast<long>(length_);
    ++length_;
  }

  double decay_average(double phi) const {
    if (phi == 1.0) return length_ ? static_cast<double>(ones_) / static_cast<double>(length_) : 0.0;
    for (std::size_t k = 0; k < phis_.size(); ++k)
      if (phis_[k] == phi) return den_[k] > 0.0 ? num_[k] / den_[k] : 0.0;
    throw ValidationError("decay parameter " + format_double(phi) + " not tracked");
  }

  double last_gap() const {
    if (last_one_ < 0) return 0.0;
    return std::sqrt(static_cast<double>(static_cast<long>(length_) - 1 - last_one_));
  }

  bool no_trace_yet() const { return ones_ == 0; }

 private:
  std::vector<double> phis_;
  std::vector<double> num_, den_;
  std::size_t length_ = 0;
  std::size_t ones_ = 0;
  long last_one_ = -1;
};

// ---------------------------------------------------------------------------
// B-splines

/// Clamped B-spline basis on [lo, hi].
class BSplineBasis {
 public:
  BSplineBasis(int degree, std::vector<double> interior, double lo = 0.0, double hi = 1.0)
      : degree_(degree), lo_(lo), hi_(hi) {
    if (degree < 0) throw ValidationError("spline degree must be nonnegative");
    if (!(hi > lo)) throw ValidationError("spline range must satisfy lo < hi");
    knots_.assign(static_cast<std::size_t>(degree + 1), lo);
    for (double k : interior) {
      if (!(k > lo && k < hi)) throw ValidationError("interior knot outside the spline range");
      knots_.push_back(k);
    }
    knots_.insert(knots_.end(), static_cast<std::size_t>(degree + 1), hi);
    if (!std::is_sorted(knots_.begin(), knots_.end()))
      throw ValidationError("spline knots must be nondecreasing");
  }

  /// `df` basis functions including the intercept; interior knots equally spaced.
  static BSplineBasis equally_spaced(int degree, int df, double lo = 0.0, double hi = 1.0) {
    const int n_interior = df - degree - 1;
    if (n_interior < 0) throw ValidationError("spline df must be at least degree + 1");
    std::vector<double> interior;
    for (int k = 1; k <= n_interior; ++k)
      interior.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n_interior + 1));
    return BSplineBasis(degree, std::move(interior), lo, hi);
  }

  int size() const { return static_cast<int>(knots_.size()) - degree_ - 1; }
  int degree() const { return degree_; }
  const std::vector<double>& knots() const { return knots_; }

  std::vector<double> evaluate(double u) const {
    if (!(u >= lo_ && u <= hi_)) throw ValidationError("spline argument outside its range");
    std::vector<double> out(static_cast<std::size_t>(size()), 0.0);
    evaluate_into(u, out);
    return out;
  }

  /// Triangular (de Boor) evaluation of the degree+1 nonzero basis functions.
  void evaluate_into(double u, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    const int p = degree_;
    // Knot span s with knots[s] <= u < knots[s+1]; the right end uses the last span.
    int s = size() - 1;
    if (u < hi_) {
      s = static_cast<int>(std::upper_bound(knots_.begin(), knots_.end(), u) - knots_.begin()) - 1;
    }
    std::vector<double> n(static_cast<std::size_t>(p + 1)), left(static_cast<std::size_t>(p + 1)),
        right(static_cast<std::size_t>(p + 1));
    n[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = u - knots_[static_cast<std::size_t>(s + 1 - j)];
      right[j] = knots_[static_cast<std::size_t>(s + j)] - u;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double temp = n[r] / (right[r + 1] + left[j - r]);
        n[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      n[j] = saved;
    }
    for (int j = 0; j <= p; ++j) out[static_cast<std::size_t>(s - p + j)] = n[j];
  }

 private:
  int degree_;
  double lo_, hi_;
  std::vector<double> knots_;
};

/// Degree-2 basis with 5 functions on [0, 1] (interior knots 1/3, 2/3).
inline std::vector<double> spline_basis(double u) {
  static const BSplineBasis basis = BSplineBasis::equally_spaced(2, 5);
  return basis.evaluate(u);
}

// ---------------------------------------------------------------------------
// Terms

enum class FactorKind { intercept, covariate, scaled, spline, indicator, election, decay, gap, boundary };

struct Factor {
  FactorKind kind = FactorKind::intercept;
  std::string covariate;
  double lo = 0.0, hi = 1.0;
  int df = 5, degree = 2;
  double level = 0.0;
  long lead = 0;
  double phi = 1.0;

  bool uses_traces() const {
    return kind == FactorKind::decay || kind == FactorKind::gap || kind == FactorKind::boundary;
  }

  int width() const { return kind == FactorKind::spline ? df : 1; }

  std::string canonical() const {
    switch (kind) {
      case FactorKind::intercept: return "1";
      case FactorKind::covariate: return covariate;
      case FactorKind::scaled:
        return "scaled(" + covariate + ",lo=" + format_double(lo) + ",hi=" + format_double(hi) + ")";
      case FactorKind::spline: {
        std::string s = "spline(" + covariate + ",df=" + std::to_string(df);
        if (degree != 2) s += ",degree=" + std::to_string(degree);
        if (lo != 0.0 || hi != 1.0) s += ",lo=" + format_double(lo) + ",hi=" + format_double(hi);
        return s + ")";
      }
      case FactorKind::indicator: return "I(" + covariate + "=" + format_double(level) + ")";
      case FactorKind::election:
        return lead == 0 ? "election" : "election(lead=" + std::to_string(lead) + ")";
      case FactorKind::decay: return "A(" + format_double(phi) + ")";
      case FactorKind::gap: return "L";
      case FactorKind::boundary: return "I(A1=0)";
    }
    return {};
  }

  std::vector<std::string> column_names() const {
    if (kind == FactorKind::intercept) return {"(Intercept)"};
    if (kind != FactorKind::spline) return {canonical()};
    std::vector<std::string> out;
    for (int g = 1; g <= df; ++g) out.push_back(canonical() + "[" + std::to_string(g) + "]");
    return out;
  }
};

struct Term {
  std::vector<Factor> factors;

  bool uses_traces() const {
    return std::any_of(factors.begin(), factors.end(), [](const Factor& f) { return f.uses_traces(); });
  }
  int width() const {
    int w = 1;
    for (const auto& f : factors) w *= f.width();
    return w;
  }
  std::string canonical() const {
    std::string s;
    for (std::size_t k = 0; k < factors.size(); ++k) s += (k ? ":" : "") + factors[k].canonical();
    return s;
  }
  std::vector<std::string> column_names() const {
    std::vector<std::string> names{""};
    for (std::size_t k = 0; k < factors.size(); ++k) {
      std::vector<std::string> next;
      for (const auto& a : names)
        for (const auto& b : factors[k].column_names()) next.push_back(k ? a + ":" + b : b);
      names = std::move(next);
    }
    return names;
  }
};

namespace detail {

inline bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
  });
}

inline std::string strip_spaces(std::string_view s) {
  std::string out;
  for (char c : s)
    if (c != ' ' && c != '\t') out += c;
  return out;
}

// Parses "head(a,b=c,...)" into positional and keyword arguments.
struct CallArgs {
  std::vector<std::string> positional;
  std::vector<std::pair<std::string, std::string>> keyword;
};

inline CallArgs parse_args(std::string_view inner) {
  CallArgs args;
  if (inner.empty()) return args;
  for (auto piece : split(inner, ',')) {
    const auto eq = piece.find('=');
    if (eq == std::string_view::npos) args.positional.emplace_back(piece);
    else args.keyword.emplace_back(std::string(piece.substr(0, eq)), std::string(piece.substr(eq + 1)));
  }
  return args;
}

inline double number_arg(const std::string& key, const std::string& value, std::string_view term) {
  const auto v = parse_double(value);
  if (!v || !std::isfinite(*v))
    throw ValidationError("term '" + std::string(term) + "': bad value for " + key);
  return *v;
}

inline Factor parse_factor(std::string_view raw, double config_phi) {
  const std::string s = strip_spaces(raw);
  const std::string_view term = s;
  Factor f;
  if (s == "1" || s == "intercept") return f;
  if (s == "L") {
    f.kind = FactorKind::gap;
    return f;
  }
  if (s == "I(A1=0)" || s == "I(A(1)=0)") {
    f.kind = FactorKind::boundary;
    return f;
  }
  if (s == "election") {
    f.kind = FactorKind::election;
    return f;
  }
  const auto open = s.find('(');
  if (open == std::string::npos) {
    if (!is_identifier(s)) throw ValidationError("unrecognised term '" + s + "'");
    f.kind = FactorKind::covariate;
    f.covariate = s;
    return f;
  }
  if (s.back() != ')') throw ValidationError("unbalanced parentheses in term '" + s + "'");
  const std::string head = s.substr(0, open);
  const std::string inner = s.substr(open + 1, s.size() - open - 2);

  if (head == "A") {
    f.kind = FactorKind::decay;
    f.phi = inner == "phi" ? config_phi : number_arg("phi", inner, term);
    if (!(f.phi > 0.0 && f.phi <= 1.0))
      throw ValidationError("term '" + s + "': phi must lie in (0, 1]");
    return f;
  }
  if (head == "I") {
    const auto eq = inner.find('=');
    if (eq == std::string::npos) throw ValidationError("term '" + s + "': expected I(name=value)");
    f.kind = FactorKind::indicator;
    f.covariate = inner.substr(0, eq);
    if (!is_identifier(f.covariate)) throw ValidationError("term '" + s + "': bad covariate name");
    f.level = number_arg("value", inner.substr(eq + 1), term);
    return f;
  }
  const CallArgs args = parse_args(inner);
  if (head == "election") {
    f.kind = FactorKind::election;
    if (!args.positional.empty()) throw ValidationError("term '" + s + "': expected election(lead=k)");
    for (const auto& [k, v] : args.keyword) {
      if (k != "lead") throw ValidationError("term '" + s + "': unknown argument " + k);
      const auto lead = parse_long(v);
      if (!lead) throw ValidationError("term '" + s + "': lead must be an integer");
      f.lead = *lead;
    }
    return f;
  }
  if (head == "spline" || head == "scaled") {
    f.kind = head == "spline" ? FactorKind::spline : FactorKind::scaled;
    if (args.positional.size() != 1 || !is_identifier(args.positional[0]))
      throw ValidationError("term '" + s + "': expected a covariate name as first argument");
    f.covariate = args.positional[0];
    for (const auto& [k, v] : args.keyword) {
      if (k == "lo") f.lo = number_arg(k, v, term);
      else if (k == "hi") f.hi = number_arg(k, v, term);
      else if (f.kind == FactorKind::spline && (k == "df" || k == "degree")) {
        const auto n = parse_long(v);
        if (!n) throw ValidationError("term '" + s + "': " + k + " must be an integer");
        (k == "df" ? f.df : f.degree) = static_cast<int>(*n);
      } else {
        throw ValidationError("term '" + s + "': unknown argument " + k);
      }
    }
    if (!(f.hi > f.lo)) throw ValidationError("term '" + s + "': requires lo < hi");
    if (f.kind == FactorKind::spline && (f.degree < 0 || f.df < f.degree + 1))
      throw ValidationError("term '" + s + "': requires df >= degree + 1");
    return f;
  }
  throw ValidationError("unrecognised term '" + s + "'");
}

}  // namespace detail

inline Term parse_term(std::string_view text, double config_phi = 0.8) {
  Term term;
  for (auto piece : split(text, ':')) term.factors.push_back(detail::parse_factor(piece, config_phi));
  if (term.factors.size() > 2)
    throw ValidationError("term '" + std::string(text) + "': interactions take exactly two factors");
  return term;
}

// ---------------------------------------------------------------------------
// Design configuration

enum class Block : std::size_t { beta0 = 0, beta1 = 1, eta0 = 2 };
inline constexpr std::array<Block, 3> kBlocks{Block::beta0, Block::beta1, Block::eta0};

inline const char* block_name(Block b) {
  switch (b) {
    case Block::beta0: return "beta0";
    case Block::beta1: return "beta1";
    case Block::eta0: return "eta0";
  }
  return "?";
}

inline Block block_from_name(std::string_view name) {
  for (Block b : kBlocks)
    if (name == block_name(b)) return b;
  throw ValidationError("unknown parameter block '" + std::string(name) + "'");
}

/// Default election half-years: Jan-Jun of 1995, 2002, 2007, 2012, 2017, 2022
/// on a grid where t = 1 is Jan-Jun 1990.
inline std::vector<long> default_election_points() { return {11, 25, 35, 45, 55, 65}; }

struct DesignConfig {
  std::vector<std::string> beta0{"1"};
  std::vector<std::string> beta1{"1"};
  std::vector<std::string> eta0{"1"};
  double phi = 0.8;
  /// Zero the membership-defining trace at t_min before anything reads it.
  bool zero_first_trace = true;
  bool allow_trace_terms_in_transitions = false;
  std::vector<long> election_points = default_election_points();

  const std::vector<std::string>& terms(Block b) const {
    return b == Block::beta0 ? beta0 : b == Block::beta1 ? beta1 : eta0;
  }
  std::vector<std::string>& terms(Block b) {
    return b == Block::beta0 ? beta0 : b == Block::beta1 ? beta1 : eta0;
  }
};

struct ResolvedBlock {
  std::vector<Term> terms;
  std::vector<std::string> columns;
};

struct ResolvedDesign {
  std::array<ResolvedBlock, 3> blocks;
  const ResolvedBlock& block(Block b) const { return blocks[static_cast<std::size_t>(b)]; }
};

/// Parses and validates a config; term order defines coefficient order.
inline ResolvedDesign resolve_design(const DesignConfig& config) {
  if (!(config.phi > 0.0 && config.phi <= 1.0)) throw ValidationError("design.phi must lie in (0, 1]");
  ResolvedDesign out;
  for (Block b : kBlocks) {
    auto& rb = out.blocks[static_cast<std::size_t>(b)];
    std::vector<std::string> seen;
    for (const auto& text : config.terms(b)) {
      Term term = parse_term(text, config.phi);
      const std::string canon = term.canonical();
      if (std::find(seen.begin(), seen.end(), canon) != seen.end())
        throw ValidationError(std::string("design.") + block_name(b) + ": duplicate term '" + canon + "'");
      seen.push_back(canon);
      if (b != Block::eta0 && term.uses_traces() && !config.allow_trace_terms_in_transitions)
        throw ValidationError(std::string("design.") + block_name(b) + ": trace term '" + canon +
                              "' is emission-only unless allow_trace_terms_in_transitions is set");
      for (auto& name : term.column_names()) rb.columns.push_back(std::move(name));
      rb.terms.push_back(std::move(term));
    }
    if (rb.terms.empty()) throw ValidationError(std::string("design.") + block_name(b) + ": no terms");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Assembly

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DesignMatrix {
  std::vector<std::string> columns;
  RowMatrix rows;  // one row per flattened cell

  std::span<const double> row(std::size_t cell) const {
    return {rows.data() + cell * static_cast<std::size_t>(rows.cols()), static_cast<std::size_t>(rows.cols())};
  }
};

struct Designs {
  std::array<DesignMatrix, 3> blocks;
  std::vector<std::size_t> offsets;
  /// Traces as seen by the model (membership trace zeroed when configured).
  std::vector<std::uint8_t> traces;
  std::vector<std::string> warnings;

  const DesignMatrix& block(Block b) const { return blocks[static_cast<std::size_t>(b)]; }
  std::size_t cells() const { return traces.size(); }
};

/// Values visible to a factor at one cell.
struct CellContext {
  std::string_view id;
  long t = 0;
  std::span<const double> covariates;  // indexed like the bound column list
  const TraceHistory* history = nullptr;
  const std::vector<long>* election_points = nullptr;
};

/// A factor bound to the covariate columns of a particular data source.
struct BoundFactor {
  Factor factor;
  std::size_t column = 0;
  std::optional<BSplineBasis> basis;
};

inline BoundFactor bind_factor(const Factor& f, const std::vector<std::string>& covariate_names) {
  BoundFactor b{f, 0, std::nullopt};
  if (f.kind == FactorKind::covariate || f.kind == FactorKind::scaled || f.kind == FactorKind::spline ||
      f.kind == FactorKind::indicator) {
    const auto it = std::find(covariate_names.begin(), covariate_names.end(), f.covariate);
    if (it == covariate_names.end())
      throw ValidationError("term '" + f.canonical() + "' references absent covariate column '" + f.covariate + "'");
    b.column = static_cast<std::size_t>(it - covariate_names.begin());
  }
  if (f.kind == FactorKind::spline) b.basis = BSplineBasis::equally_spaced(f.degree, f.df);
  return b;
}

inline void evaluate_factor(const BoundFactor& bf, const CellContext& ctx, std::span<double> out) {
  const Factor& f = bf.factor;
  switch (f.kind) {
    case FactorKind::intercept: out[0] = 1.0; return;
    case FactorKind::covariate: out[0] = ctx.covariates[bf.column]; return;
    case FactorKind::scaled: out[0] = (ctx.covariates[bf.column] - f.lo) / (f.hi - f.lo); return;
    case FactorKind::indicator: out[0] = ctx.covariates[bf.column] == f.level ? 1.0 : 0.0; return;
    case FactorKind::spline: {
      double u = (ctx.covariates[bf.column] - f.lo) / (f.hi - f.lo);
      if (u < -1e-12 || u > 1.0 + 1e-12)
        throw ValidationError("spline covariate '" + f.covariate + "' outside [0, 1] after normalisation" +
                              at_cell(ctx.id, ctx.t));
      u = std::clamp(u, 0.0, 1.0);
      bf.basis->evaluate_into(u, out);
      return;
    }
    case FactorKind::election: {
      const auto& pts = *ctx.election_points;
      const long a = ctx.t + f.lead, b = a + 1;
      out[0] = (std::find(pts.begin(), pts.end(), a) != pts.end() ||
                std::find(pts.begin(), pts.end(), b) != pts.end())
                   ? 1.0
                   : 0.0;
      return;
    }
    case FactorKind::decay: out[0] = ctx.history->decay_average(f.phi); return;
    case FactorKind::gap: out[0] = ctx.history->last_gap(); return;
    case FactorKind::boundary: out[0] = ctx.history->no_trace_yet() ? 1.0 : 0.0; return;
  }
}

/// Evaluates a list of bound terms (each one or two factors) into `out`.
class TermEvaluator {
 public:
  TermEvaluator(const std::vector<Term>& terms, const std::vector<std::string>& covariate_names) {
    for (const auto& term : terms) {
      std::vector<BoundFactor> bound;
      for (const auto& f : term.factors) bound.push_back(bind_factor(f, covariate_names));
      terms_.push_back(std::move(bound));
      width_ += term.width();
    }
  }

  int width() const { return width_; }

  void evaluate(const CellContext& ctx, std::span<double> out) const {
    std::size_t pos = 0;
    for (const auto& factors : terms_) {
      const auto wa = static_cast<std::size_t>(factors[0].factor.width());
      scratch_a_.resize(wa);
      evaluate_factor(factors[0], ctx, scratch_a_);
      if (factors.size() == 1) {
        std::copy(scratch_a_.begin(), scratch_a_.end(), out.begin() + static_cast<long>(pos));
        pos += wa;
        continue;
      }
      const auto wb = static_cast<std::size_t>(factors[1].factor.width());
      scratch_b_.resize(wb);
      evaluate_factor(factors[1], ctx, scratch_b_);
      for (std::size_t i = 0; i < wa; ++i)
        for (std::size_t j = 0; j < wb; ++j) out[pos++] = scratch_a_[i] * scratch_b_[j];
    }
  }

  /// Distinct phi values (excluding 1) any factor reads.
  std::vector<double> decay_parameters() const {
    std::vector<double> phis;
    for (const auto& factors : terms_)
      for (const auto& bf : factors)
        if (bf.factor.kind == FactorKind::decay && bf.factor.phi != 1.0 &&
            std::find(phis.begin(), phis.end(), bf.factor.phi) == phis.end())
          phis.push_back(bf.factor.phi);
    return phis;
  }

 private:
  std::vector<std::vector<BoundFactor>> terms_;
  int width_ = 0;
  mutable std::vector<double> scratch_a_, scratch_b_;
};

namespace detail {
inline double correlation(const RowMatrix& m, Eigen::Index a, Eigen::Index b) {
  const Eigen::VectorXd x = m.col(a).array() - m.col(a).mean();
  const Eigen::VectorXd y = m.col(b).array() - m.col(b).mean();
  const double den = std::sqrt(x.squaredNorm() * y.squaredNorm());
  return den > 0.0 ? x.dot(y) / den : 0.0;
}
}  // namespace detail

/// Builds the transition rows (beta0, beta1) and emission rows (eta0) for
/// every cell of the panel. Deterministic: identical inputs give
/// bit-identical matrices.
inline Designs assemble_designs(const PanelData& panel, const DesignConfig& config) {
  panel.validate();
  const ResolvedDesign resolved = resolve_design(config);
  Designs d;
  d.offsets = cell_offsets(panel);
  const std::size_t cells = d.offsets.back();
  d.traces.resize(cells);

  std::array<TermEvaluator, 3> evals{TermEvaluator(resolved.blocks[0].terms, panel.covariate_names),
                                     TermEvaluator(resolved.blocks[1].terms, panel.covariate_names),
                                     TermEvaluator(resolved.blocks[2].terms, panel.covariate_names)};
  std::vector<double> phis;
  for (const auto& e : evals)
    for (double p : e.decay_parameters())
      if (std::find(phis.begin(), phis.end(), p) == phis.end()) phis.push_back(p);

  for (Block b : kBlocks) {
    auto& dm = d.blocks[static_cast<std::size_t>(b)];
    dm.columns = resolved.block(b).columns;
    dm.rows.resize(static_cast<Eigen::Index>(cells), evals[static_cast<std::size_t>(b)].width());
  }

  std::vector<double> cov(panel.covariate_names.size());
  for (std::size_t i = 0; i < panel.individuals.size(); ++i) {
    const auto& rec = panel.individuals[i];
    TraceHistory history(phis);
    for (std::size_t o = 0; o < rec.length(); ++o) {
      const std::size_t c = d.offsets[i] + o;
      const std::uint8_t y = (o == 0 && config.zero_first_trace) ? 0 : rec.traces[o];
      d.traces[c] = y;
      for (std::size_t k = 0; k < cov.size(); ++k) cov[k] = rec.covariates[k][o];
      const CellContext ctx{rec.id, rec.t_min + static_cast<long>(o), cov, &history, &config.election_points};
      for (Block b : kBlocks) {
        auto& dm = d.blocks[static_cast<std::size_t>(b)];
        std::span<double> row(dm.rows.data() + c * static_cast<std::size_t>(dm.rows.cols()),
                              static_cast<std::size_t>(dm.rows.cols()));
        evals[static_cast<std::size_t>(b)].evaluate(ctx, row);
      }
      history.push(y, rec.traces[o] != 0);
    }
  }

  // Near-collinear decay columns make the information matrix ill-conditioned.
  for (Block b : kBlocks) {
    const auto& terms = resolved.block(b).terms;
    const auto& dm = d.block(b);
    std::vector<std::pair<Eigen::Index, std::string>> decay_cols;
    Eigen::Index col = 0;
    for (const auto& term : terms) {
      if (term.factors.size() == 1 && term.factors[0].kind == FactorKind::decay)
        decay_cols.emplace_back(col, term.canonical());
      col += term.width();
    }
    for (std::size_t a = 0; a < decay_cols.size(); ++a)
      for (std::size_t c2 = a + 1; c2 < decay_cols.size(); ++c2) {
        const double r = detail::correlation(dm.rows, decay_cols[a].first, decay_cols[c2].first);
        if (std::abs(r) > 0.99)
          d.warnings.push_back(std::string(block_name(b)) + ": columns " + decay_cols[a].second + " and " +
                               decay_cols[c2].second + " have correlation " + format_double(r) +
                               " (ill-conditioned)");
      }
  }
  return d;
}

}  // namespace mstrace
