#pragma once

// The iterative transition system. Parsing proceeds in rounds: at each time
// step every unfinished word simultaneously selects one transition — either
// NULL (do nothing) or the creation of an arc from a head candidate (the
// virtual root or any other word) to itself. Arcs accumulate monotonically;
// reflexive arcs and re-creation of existing arcs are illegal. Parsing
// halts when every word selects NULL.

#include <cstdint>
#include <string>
#include <vector>

#include "ips/common.hpp"
#include "ips/corpus.hpp"

namespace ips {

struct Transition {
  enum class Kind : std::uint8_t { kNull, kArc };
  Kind kind = Kind::kNull;
  std::size_t dependent = 0;  // the word this transition belongs to
  std::size_t head = 0;       // 0 = root; meaningful only for kArc

  static Transition null_for(std::size_t dependent) {
    return {Kind::kNull, dependent, 0};
  }
  static Transition arc(std::size_t dependent, std::size_t head) {
    return {Kind::kArc, dependent, head};
  }
  bool is_null() const { return kind == Kind::kNull; }

  friend bool operator==(const Transition& a, const Transition& b) {
    return a.kind == b.kind && a.dependent == b.dependent &&
           (a.kind == Transition::Kind::kNull || a.head == b.head);
  }
};

// Score rows over transitions for a word use a fixed column layout:
// column 0 = NULL, column 1 = arc from the root, column 1+j = arc from
// word j.
inline std::size_t column_of(const Transition& t) {
  return t.is_null() ? 0 : 1 + t.head;
}

inline Transition transition_at(std::size_t word, std::size_t column) {
  return column == 0 ? Transition::null_for(word) : Transition::arc(word, column - 1);
}

// The partial parse: a binary incidence matrix over (dependent, head)
// pairs, per-word finish flags used by reinforcement episodes, and the
// current time step. Value semantics; apply_round returns a new state.
class ParserState {
 public:
  static ParserState initial(std::size_t n) {
    ParserState s;
    s.n_ = n;
    s.cells_.assign(n * (n + 1), 0);
    s.finished_.assign(n + 1, 0);
    return s;
  }

  std::size_t n() const { return n_; }
  std::size_t time_step() const { return tau_; }

  // head: 0 = root, 1..n = words. dependent: 1..n.
  bool has_arc(std::size_t dependent, std::size_t head) const {
    return cells_[cell(dependent, head)] != 0;
  }

  std::size_t arc_count() const {
    std::size_t c = 0;
    for (std::uint8_t v : cells_) c += v;
    return c;
  }

  std::vector<std::size_t> heads_of(std::size_t dependent) const {
    std::vector<std::size_t> out;
    for (std::size_t h = 0; h <= n_; ++h)
      if (has_arc(dependent, h)) out.push_back(h);
    return out;
  }

  bool finished(std::size_t word) const { return finished_.at(word) != 0; }
  void set_finished(std::size_t word) { finished_.at(word) = 1; }
  bool all_finished() const {
    for (std::size_t w = 1; w <= n_; ++w)
      if (!finished_[w]) return false;
    return true;
  }

  SemanticGraph to_graph(const std::string& placeholder_label = "_") const {
    SemanticGraph g;
    for (std::size_t d = 1; d <= n_; ++d)
      for (std::size_t h = 0; h <= n_; ++h)
        if (has_arc(d, h)) g.add({h, d, placeholder_label});
    return g;
  }

  friend bool operator==(const ParserState& a, const ParserState& b) {
    return a.n_ == b.n_ && a.cells_ == b.cells_ && a.finished_ == b.finished_ &&
           a.tau_ == b.tau_;
  }

 private:
  friend ParserState apply_round(const ParserState&, const std::vector<Transition>&);

  std::size_t cell(std::size_t dependent, std::size_t head) const {
    if (dependent < 1 || dependent > n_ || head > n_)
      throw error("ParserState: cell (" + std::to_string(dependent) + ", " +
                  std::to_string(head) + ") out of range for n=" + std::to_string(n_));
    return (dependent - 1) * (n_ + 1) + head;
  }

  std::size_t n_ = 0;
  std::vector<std::uint8_t> cells_;   // row-major (dependent-1, head)
  std::vector<std::uint8_t> finished_;
  std::size_t tau_ = 0;
};

// All transitions word may legally select: NULL first, then arcs from the
// root and from each other word in index order, skipping the word itself
// and heads whose arc already exists.
inline std::vector<Transition> legal_transitions(const ParserState& state, std::size_t word) {
  if (word < 1 || word > state.n())
    throw error("legal_transitions: word " + std::to_string(word) + " out of range");
  std::vector<Transition> out;
  out.reserve(state.n() + 2);
  out.push_back(Transition::null_for(word));
  for (std::size_t h = 0; h <= state.n(); ++h) {
    if (h == word) continue;
    if (!state.has_arc(word, h)) out.push_back(Transition::arc(word, h));
  }
  return out;
}

inline std::vector<char> legality_mask(const ParserState& state, std::size_t word) {
  std::vector<char> mask(state.n() + 2, 0);
  mask[0] = 1;
  for (std::size_t h = 0; h <= state.n(); ++h)
    if (h != word && !state.has_arc(word, h)) mask[1 + h] = 1;
  return mask;
}

// Highest-scoring legal column; the smallest column wins ties.
inline std::size_t argmax_column(const std::vector<double>& scores, const std::vector<char>& mask) {
  std::size_t best = 0;
  bool found = false;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (!mask[k]) continue;
    if (!found || scores[k] > scores[best]) {
      best = k;
      found = true;
    }
  }
  if (!found) throw error("argmax_column: empty mask");
  return best;
}

// Draws a column from a probability row by inverse CDF.
inline std::size_t sample_column(const std::vector<double>& probs, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] <= 0.0) continue;
    acc += probs[k];
    last = k;
    if (u < acc) return k;
  }
  return last;  // numerical slack: acc may fall epsilon short of 1
}

// One parallel round. `chosen` holds at most one transition per unfinished
// word; words without an entry implicitly select NULL. The time step
// advances by one.
inline ParserState apply_round(const ParserState& state, const std::vector<Transition>& chosen) {
  ParserState next = state;
  std::vector<char> seen(state.n() + 1, 0);
  for (const Transition& t : chosen) {
    if (t.dependent < 1 || t.dependent > state.n())
      throw error("apply_round: dependent " + std::to_string(t.dependent) + " out of range");
    if (seen[t.dependent])
      throw error("apply_round: two transitions for word " + std::to_string(t.dependent));
    seen[t.dependent] = 1;
    if (state.finished(t.dependent))
      throw error("apply_round: transition for finished word " + std::to_string(t.dependent));
    if (t.is_null()) continue;
    if (t.head > state.n())
      throw error("apply_round: head " + std::to_string(t.head) + " out of range");
    if (t.head == t.dependent)
      throw error("apply_round: reflexive arc on word " + std::to_string(t.dependent));
    if (state.has_arc(t.dependent, t.head))
      throw error("apply_round: duplicate arc " + std::to_string(t.head) + " -> " +
                  std::to_string(t.dependent));
    next.cells_[next.cell(t.dependent, t.head)] = 1;
  }
  next.tau_ += 1;
  return next;
}

inline bool is_terminal_round(const std::vector<Transition>& chosen) {
  for (const Transition& t : chosen)
    if (!t.is_null()) return false;
  return true;
}

// Gold-consistent targets for the current state: every word selects an arc
// to a randomly chosen still-missing gold head, or NULL when none remain.
// Inapplicable when the state already contains a non-gold arc.
inline std::vector<Transition> oracle_targets(const ParserState& state, const SemanticGraph& gold,
                                              Rng& rng) {
  std::vector<Transition> out;
  out.reserve(state.n());
  for (std::size_t w = 1; w <= state.n(); ++w) {
    std::vector<std::size_t> missing;
    for (std::size_t h = 0; h <= state.n(); ++h) {
      if (h == w) continue;
      bool built = state.has_arc(w, h);
      if (built && !gold.has(h, w))
        throw error("oracle_targets: state contains non-gold arc " + std::to_string(h) + " -> " +
                    std::to_string(w));
      if (!built && gold.has(h, w)) missing.push_back(h);
    }
    if (missing.empty())
      out.push_back(Transition::null_for(w));
    else
      out.push_back(Transition::arc(w, missing[rng.index(missing.size())]));
  }
  return out;
}

// A full parse trajectory: the per-round transitions (the terminal
// all-NULL round included) and the resulting state.
struct Derivation {
  std::vector<std::vector<Transition>> rounds;
  ParserState final_state = ParserState::initial(0);
  bool hit_round_cap = false;
};

// Replays the sampling oracle until termination and checks it reproduces
// the gold arcs.
inline Derivation replay_oracle(const Sentence& sentence, const SemanticGraph& gold, Rng& rng) {
  Derivation d;
  ParserState state = ParserState::initial(sentence.size());
  while (true) {
    std::vector<Transition> targets = oracle_targets(state, gold, rng);
    state = apply_round(state, targets);
    bool terminal = is_terminal_round(targets);
    d.rounds.push_back(std::move(targets));
    if (terminal) break;
  }
  d.final_state = state;
  return d;
}

}  // namespace ips
