#pragma once

// Scoring and analysis: micro-averaged F-measure over pooled arcs, cycle
// statistics for repair-disabled decoding, per-transition-step arc-length
// histograms, and the signed-length analysis against reference syntactic
// trees. Also the tabular report writer (CSV / JSON) and derivation
// (de)serialization used by the analysis pipeline.

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "ips/common.hpp"
#include "ips/corpus.hpp"
#include "ips/transition.hpp"

namespace ips {

// --- micro F1 ---------------------------------------------------------------------

struct F1Result {
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Pools arcs over the whole corpus. Labeled mode requires (head, dependent,
// label) to match; unlabeled only (head, dependent). Arcs to ROOT (head 0)
// count only when `include_root`. Degenerate ratios (0/0) are defined as 0.
// Corpora must align pairwise by sentence id and length.
inline F1Result micro_f1(const Corpus& gold, const Corpus& predicted, bool labeled,
                         bool include_root = true) {
  if (gold.size() != predicted.size())
    throw data_error("micro_f1: corpus sizes differ (" + std::to_string(gold.size()) + " vs " +
                     std::to_string(predicted.size()) + ")");
  F1Result r;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& [gs, gg] = gold[i];
    const auto& [ps, pg] = predicted[i];
    if (gs.id != ps.id || gs.size() != ps.size())
      throw data_error("micro_f1: corpora misaligned at sentence '" + gs.id + "' (id '" + ps.id +
                       "', lengths " + std::to_string(gs.size()) + " vs " +
                       std::to_string(ps.size()) + ")");
    for (const Arc& a : gg.arcs()) {
      if (a.head == 0 && !include_root) continue;
      ++r.gold;
    }
    for (const Arc& a : pg.arcs()) {
      if (a.head == 0 && !include_root) continue;
      ++r.predicted;
      const std::string* gold_label = gg.label(a.head, a.dependent);
      if (!gold_label) continue;
      if (!labeled || *gold_label == a.label) ++r.matched;
    }
  }
  r.precision = r.predicted ? static_cast<double>(r.matched) / r.predicted : 0.0;
  r.recall = r.gold ? static_cast<double>(r.matched) / r.gold : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                        : 0.0;
  return r;
}

// --- cycle statistics ---------------------------------------------------------------

struct CycleStats {
  std::size_t cyclic = 0;
  std::size_t total = 0;
  double percentage = 0.0;  // 0..100
};

inline CycleStats cycle_stats(const Corpus& predicted) {
  CycleStats s;
  s.total = predicted.size();
  for (const auto& [sent, graph] : predicted)
    if (!is_acyclic(graph, sent.size())) ++s.cyclic;
  s.percentage = s.total ? 100.0 * static_cast<double>(s.cyclic) / s.total : 0.0;
  return s;
}

// --- arc length histogram --------------------------------------------------------

// Rows: transition steps 1..4 plus an aggregate 5+ bucket. Columns: arc
// lengths |head - dependent| of 1..9, a 10+ tail, and a separate ROOT bin.
struct ArcLengthHistogram {
  static constexpr std::size_t kSteps = 5;
  static constexpr std::size_t kBins = 11;
  static constexpr std::size_t kRootBin = 10;

  std::array<std::array<double, kBins>, kSteps> counts{};

  static std::size_t step_index(std::size_t round) {  // 0-based round -> row
    return round < kSteps - 1 ? round : kSteps - 1;
  }
  static std::size_t bin_of(std::size_t head, std::size_t dependent) {
    if (head == 0) return kRootBin;
    std::size_t len = head > dependent ? head - dependent : dependent - head;
    return len <= 9 ? len - 1 : 9;
  }
  static std::string step_name(std::size_t s) {
    return s < kSteps - 1 ? std::to_string(s + 1) : "5+";
  }
  static std::string bin_name(std::size_t b) {
    if (b == kRootBin) return "ROOT";
    return b < 9 ? std::to_string(b + 1) : "10+";
  }

  double step_total(std::size_t s) const {
    double t = 0.0;
    for (double c : counts[s]) t += c;
    return t;
  }
  // Normalized mass per step; all-zero rows stay all-zero.
  std::array<double, kBins> mass(std::size_t s) const {
    std::array<double, kBins> out{};
    double t = step_total(s);
    if (t > 0.0)
      for (std::size_t b = 0; b < kBins; ++b) out[b] = counts[s][b] / t;
    return out;
  }
};

inline ArcLengthHistogram arc_length_histogram(const std::vector<Derivation>& derivations) {
  ArcLengthHistogram h;
  for (const Derivation& d : derivations)
    for (std::size_t round = 0; round < d.rounds.size(); ++round)
      for (const Transition& t : d.rounds[round]) {
        if (t.is_null()) continue;
        h.counts[ArcLengthHistogram::step_index(round)]
                [ArcLengthHistogram::bin_of(t.head, t.dependent)] += 1.0;
      }
  return h;
}

// --- alignment with reference trees -----------------------------------------------

// Signed-length analysis of created arcs against one-head-per-word
// reference trees. An arc is matched when its endpoints stand in an
// ancestor/descendant relation in the tree; the sign is positive when the
// arc's head is the tree-side ancestor and negative when it opposes the
// tree. The per-step distributions and means are restricted to dependents
// with at least `min_heads` heads in the final graph, since words with few
// heads finish in the earliest steps.
struct AlignmentResult {
  static constexpr std::size_t kSteps = ArcLengthHistogram::kSteps;

  std::array<std::map<int, double>, kSteps> counts;  // signed length -> count
  std::array<double, kSteps> mean_signed{};
  std::array<std::size_t, kSteps> mean_support{};  // arcs behind each mean
  std::size_t matched = 0;    // over all created arcs, unrestricted
  std::size_t unmatched = 0;  // ROOT arcs and tree-unrelated arcs
  std::size_t total = 0;
};

namespace detail {

// True when `anc` is a strict ancestor of `node` in the reference tree.
inline bool tree_ancestor(const RefTree& tree, std::size_t anc, std::size_t node) {
  std::size_t v = node;
  for (std::size_t steps = 0; steps <= tree.size(); ++steps) {
    if (v == 0) return false;
    v = tree.head[v - 1];
    if (v == anc) return true;
  }
  return false;  // malformed (cyclic) tree: treat as unrelated
}

}  // namespace detail

inline AlignmentResult syntactic_alignment(const std::vector<Derivation>& derivations,
                                           const std::vector<RefTree>& trees,
                                           std::size_t min_heads = 4) {
  if (derivations.size() != trees.size())
    throw data_error("syntactic_alignment: " + std::to_string(derivations.size()) +
                     " derivations vs " + std::to_string(trees.size()) + " reference trees");
  AlignmentResult res;
  std::array<double, AlignmentResult::kSteps> sums{};

  for (std::size_t i = 0; i < derivations.size(); ++i) {
    const Derivation& d = derivations[i];
    const RefTree& tree = trees[i];
    std::size_t n = d.final_state.n();
    if (tree.size() != n)
      throw data_error("syntactic_alignment: sentence " + std::to_string(i) + " has " +
                       std::to_string(n) + " words but its reference tree has " +
                       std::to_string(tree.size()));

    std::vector<std::size_t> head_count(n + 1, 0);
    for (const std::vector<Transition>& round : d.rounds)
      for (const Transition& t : round)
        if (!t.is_null()) ++head_count[t.dependent];

    for (std::size_t round = 0; round < d.rounds.size(); ++round) {
      for (const Transition& t : d.rounds[round]) {
        if (t.is_null()) continue;
        ++res.total;
        if (t.head == 0) {
          ++res.unmatched;
          continue;
        }
        bool head_is_ancestor = detail::tree_ancestor(tree, t.head, t.dependent);
        bool dep_is_ancestor = detail::tree_ancestor(tree, t.dependent, t.head);
        if (!head_is_ancestor && !dep_is_ancestor) {
          ++res.unmatched;
          continue;
        }
        ++res.matched;
        if (head_count[t.dependent] < min_heads) continue;
        std::size_t len = t.head > t.dependent ? t.head - t.dependent : t.dependent - t.head;
        int signed_len = head_is_ancestor ? static_cast<int>(len) : -static_cast<int>(len);
        std::size_t s = ArcLengthHistogram::step_index(round);
        res.counts[s][signed_len] += 1.0;
        sums[s] += signed_len;
        ++res.mean_support[s];
      }
    }
  }
  for (std::size_t s = 0; s < AlignmentResult::kSteps; ++s)
    res.mean_signed[s] = res.mean_support[s] ? sums[s] / res.mean_support[s] : 0.0;
  return res;
}

// --- tabular reports -----------------------------------------------------------------

// A plot-ready table; the column order is part of the contract.
struct Report {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  friend bool operator==(const Report& a, const Report& b) {
    return a.columns == b.columns && a.rows == b.rows;
  }
};

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

// Columns: step, bin, count, mass.
inline Report histogram_report(const ArcLengthHistogram& h) {
  Report r;
  r.columns = {"step", "bin", "count", "mass"};
  for (std::size_t s = 0; s < ArcLengthHistogram::kSteps; ++s) {
    std::array<double, ArcLengthHistogram::kBins> mass = h.mass(s);
    for (std::size_t b = 0; b < ArcLengthHistogram::kBins; ++b)
      r.rows.push_back({ArcLengthHistogram::step_name(s), ArcLengthHistogram::bin_name(b),
                        format_number(h.counts[s][b]), format_number(mass[b])});
  }
  return r;
}

// Columns: step, signed_length, count. Means appended as rows with bin
// "mean" (value column holds the mean, count column the support).
inline Report alignment_report(const AlignmentResult& a) {
  Report r;
  r.columns = {"step", "signed_length", "count"};
  for (std::size_t s = 0; s < AlignmentResult::kSteps; ++s)
    for (const auto& [len, count] : a.counts[s])
      r.rows.push_back(
          {ArcLengthHistogram::step_name(s), std::to_string(len), format_number(count)});
  for (std::size_t s = 0; s < AlignmentResult::kSteps; ++s) {
    r.rows.push_back(
        {ArcLengthHistogram::step_name(s), "mean", format_number(a.mean_signed[s])});
    r.rows.push_back(
        {ArcLengthHistogram::step_name(s), "mean_support", std::to_string(a.mean_support[s])});
  }
  return r;
}

// Columns: metric, value.
inline Report f1_report(const F1Result& f, const std::string& prefix) {
  Report r;
  r.columns = {"metric", "value"};
  r.rows.push_back({prefix + "_precision", format_number(f.precision)});
  r.rows.push_back({prefix + "_recall", format_number(f.recall)});
  r.rows.push_back({prefix + "_f1", format_number(f.f1)});
  r.rows.push_back({prefix + "_matched", std::to_string(f.matched)});
  r.rows.push_back({prefix + "_predicted", std::to_string(f.predicted)});
  r.rows.push_back({prefix + "_gold", std::to_string(f.gold)});
  return r;
}

inline void write_csv(const Report& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  auto cell = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  for (std::size_t c = 0; c < r.columns.size(); ++c)
    out << (c ? "," : "") << cell(r.columns[c]);
  out << '\n';
  for (const std::vector<std::string>& row : r.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << cell(row[c]);
    out << '\n';
  }
  if (!out) throw data_error("failed writing " + path);
}

inline nlohmann::json report_to_json(const Report& r) {
  return nlohmann::json{{"columns", r.columns}, {"rows", r.rows}};
}

inline Report report_from_json(const nlohmann::json& j) {
  Report r;
  r.columns = j.at("columns").get<std::vector<std::string>>();
  r.rows = j.at("rows").get<std::vector<std::vector<std::string>>>();
  return r;
}

inline void write_json(const Report& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  out << report_to_json(r).dump(2) << '\n';
  if (!out) throw data_error("failed writing " + path);
}

inline Report read_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": " + e.what());
  }
  return report_from_json(j);
}

// --- derivation serialization ------------------------------------------------------

// JSON-lines: one object per sentence with the committed arcs per round.
// NULL transitions are implicit (arcs only), matching what the analyses
// consume.
inline void write_derivations(const std::vector<std::pair<std::string, Derivation>>& derivations,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  for (const auto& [id, d] : derivations) {
    nlohmann::json rounds = nlohmann::json::array();
    for (const std::vector<Transition>& round : d.rounds) {
      nlohmann::json arcs = nlohmann::json::array();
      for (const Transition& t : round)
        if (!t.is_null()) arcs.push_back({t.dependent, t.head});
      rounds.push_back(arcs);
    }
    nlohmann::json j{{"id", id},
                     {"n", d.final_state.n()},
                     {"rounds", rounds},
                     {"hit_round_cap", d.hit_round_cap}};
    out << j.dump() << '\n';
  }
  if (!out) throw data_error("failed writing " + path);
}

inline std::vector<std::pair<std::string, Derivation>> read_derivations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  std::vector<std::pair<std::string, Derivation>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw data_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Derivation d;
    std::size_t n = j.at("n").get<std::size_t>();
    ParserState state = ParserState::initial(n);
    for (const nlohmann::json& round : j.at("rounds")) {
      std::vector<Transition> transitions;
      for (const nlohmann::json& arc : round)
        transitions.push_back(
            Transition::arc(arc.at(0).get<std::size_t>(), arc.at(1).get<std::size_t>()));
      state = apply_round(state, transitions);
      d.rounds.push_back(std::move(transitions));
    }
    d.final_state = state;
    d.hit_round_cap = j.value("hit_round_cap", false);
    out.emplace_back(j.at("id").get<std::string>(), std::move(d));
  }
  return out;
}

}  // namespace ips
