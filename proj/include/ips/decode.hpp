#pragma once

// Greedy inference: per round every word takes its argmax legal transition,
// candidate arcs pass through cycle repair, and decoding halts once a round
// commits no arc (every word at NULL). Repair swaps the lowest-probability
// circle-forming arcs for their next-best alternatives so committed graphs
// are always acyclic.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "ips/common.hpp"
#include "ips/corpus.hpp"
#include "ips/model.hpp"
#include "ips/transition.hpp"

namespace ips {

// Per-round policy: rows[w] for words 1..n (rows[0] unused) hold masked
// transition probabilities of size n+2 (column 0 NULL, 1 head ROOT, 1+j
// head j); illegal columns are 0 and legal columns sum to 1.
using RoundScorer = std::function<std::vector<std::vector<double>>(const ParserState&)>;

struct DecodeOptions {
  bool repair = true;
  std::size_t max_rounds = 0;  // 0 -> max(2n, 20)
  bool record_repairs = false;
};

// One arc swap performed by cycle repair.
struct RepairEvent {
  std::size_t round = 0;
  std::size_t dependent = 0;
  std::size_t removed_head = 0;
  double removed_prob = 0.0;
  bool null_substituted = false;  // true when the alternative was NULL
  std::size_t new_head = 0;
  double new_prob = 0.0;
};

// A proposed arc for the current round, carrying its policy probability.
struct CandidateArc {
  std::size_t dependent = 0;
  std::size_t head = 0;
  double prob = 0.0;
};

namespace detail {

// True when `to` is reachable from `from` over existing state arcs plus the
// candidate arcs (edges run head -> dependent).
inline bool reachable(const ParserState& state, const std::vector<CandidateArc>& arcs,
                      std::size_t from, std::size_t to) {
  std::vector<char> seen(state.n() + 1, 0);
  std::vector<std::size_t> stack{from};
  seen[from] = 1;
  while (!stack.empty()) {
    std::size_t v = stack.back();
    stack.pop_back();
    if (v == to) return true;
    for (std::size_t d = 1; d <= state.n(); ++d) {
      if (!seen[d] && state.has_arc(d, v)) {
        seen[d] = 1;
        stack.push_back(d);
      }
    }
    for (const CandidateArc& a : arcs) {
      if (a.head == v && !seen[a.dependent]) {
        seen[a.dependent] = 1;
        stack.push_back(a.dependent);
      }
    }
  }
  return false;
}

// Indices of candidate arcs lying on a directed circle of state ∪ arcs: an
// arc h -> d is on a circle exactly when h is reachable back from d. The
// committed state is itself acyclic, so every circle runs through some
// candidate.
inline std::vector<std::size_t> circle_arcs(const ParserState& state,
                                            const std::vector<CandidateArc>& arcs) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < arcs.size(); ++i)
    if (reachable(state, arcs, arcs[i].dependent, arcs[i].head)) out.push_back(i);
  return out;
}

}  // namespace detail

// Cycle repair. Starting from the candidate arcs A of one round:
//   1. find the arcs participating in circles of y ∪ A; none -> accept A;
//   2. clear the reduced buffer B and the alternative buffer B';
//   3. move the lowest-probability circle arc of A \ B into B (ties break
//      toward the smaller dependent index);
//   4. append the arc's next-best legal alternative — possibly NULL — to B';
//   5. if y ∪ A \ B still has circles, repeat from 3; otherwise commit
//      A <- (A \ B) ∪ {non-NULL members of B'} and return to 1, so
//      alternatives that themselves form circles are repaired in turn.
// Words keep at most one candidate arc each; alternatives walk down that
// word's probability ranking and NULL is always available, so the loop
// terminates with an acyclic union.
inline std::vector<CandidateArc> repair_cycles(const ParserState& state,
                                               std::vector<CandidateArc> arcs,
                                               const std::vector<std::vector<double>>& rows,
                                               std::vector<RepairEvent>* events = nullptr,
                                               std::size_t round = 0) {
  // Legal columns per word, most probable first; computed on first use.
  std::vector<std::vector<std::size_t>> ranking(state.n() + 1);
  auto ranked = [&](std::size_t word) -> const std::vector<std::size_t>& {
    std::vector<std::size_t>& r = ranking[word];
    if (r.empty()) {
      std::vector<char> mask = legality_mask(state, word);
      for (std::size_t col = 0; col < mask.size(); ++col)
        if (mask[col]) r.push_back(col);
      const std::vector<double>& p = rows[word];
      std::stable_sort(r.begin(), r.end(),
                       [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    }
    return r;
  };

  while (true) {
    std::vector<std::size_t> circle = detail::circle_arcs(state, arcs);
    if (circle.empty()) return arcs;

    std::vector<char> reduced(arcs.size(), 0);
    std::vector<CandidateArc> alternatives;
    while (true) {
      std::size_t pick = arcs.size();
      for (std::size_t i : circle) {
        if (reduced[i]) continue;
        if (pick == arcs.size() || arcs[i].prob < arcs[pick].prob ||
            (arcs[i].prob == arcs[pick].prob && arcs[i].dependent < arcs[pick].dependent))
          pick = i;
      }
      if (pick == arcs.size()) break;  // every circle arc reduced; union is now acyclic
      reduced[pick] = 1;

      const CandidateArc& a = arcs[pick];
      const std::vector<std::size_t>& r = ranked(a.dependent);
      std::size_t pos = 0;
      while (pos < r.size() && r[pos] != 1 + a.head) ++pos;
      std::size_t alt_col = pos + 1 < r.size() ? r[pos + 1] : 0;

      RepairEvent ev;
      ev.round = round;
      ev.dependent = a.dependent;
      ev.removed_head = a.head;
      ev.removed_prob = a.prob;
      if (alt_col == 0) {
        ev.null_substituted = true;
        ev.new_prob = rows[a.dependent][0];
      } else {
        ev.new_head = alt_col - 1;
        ev.new_prob = rows[a.dependent][alt_col];
        alternatives.push_back({a.dependent, alt_col - 1, ev.new_prob});
      }
      if (events) events->push_back(ev);

      std::vector<CandidateArc> kept;
      for (std::size_t i = 0; i < arcs.size(); ++i)
        if (!reduced[i]) kept.push_back(arcs[i]);
      if (detail::circle_arcs(state, kept).empty()) break;
    }

    std::vector<CandidateArc> next;
    for (std::size_t i = 0; i < arcs.size(); ++i)
      if (!reduced[i]) next.push_back(arcs[i]);
    for (const CandidateArc& a : alternatives) next.push_back(a);
    arcs = std::move(next);
  }
}

struct DecodeResult {
  SemanticGraph graph;  // unlabeled (placeholder labels)
  Derivation derivation;
  std::vector<RepairEvent> repairs;
};

// Greedy decoding. Each round scores every word, takes argmax transitions,
// repairs circles among the proposed arcs, and commits the survivors.
// Words that selected NULL stay active and may still add arcs later.
// Decoding halts when a round commits no arc, or at the safety cap
// max(2n, 20) rounds (configurable), in which case `hit_round_cap` is set.
inline DecodeResult greedy_parse(std::size_t n, const RoundScorer& scorer,
                                 const DecodeOptions& opt = {}) {
  DecodeResult out;
  ParserState state = ParserState::initial(n);
  std::size_t cap = opt.max_rounds ? opt.max_rounds : std::max<std::size_t>(2 * n, 20);

  while (true) {
    if (state.time_step() >= cap) {
      out.derivation.hit_round_cap = true;
      break;
    }
    std::vector<std::vector<double>> rows = scorer(state);

    std::vector<CandidateArc> arcs;
    for (std::size_t w = 1; w <= n; ++w) {
      std::size_t col = argmax_column(rows[w], legality_mask(state, w));
      if (col != 0) arcs.push_back({w, col - 1, rows[w][col]});
    }
    if (opt.repair)
      arcs = repair_cycles(state, std::move(arcs), rows,
                           opt.record_repairs ? &out.repairs : nullptr, state.time_step());

    std::vector<Transition> committed;
    for (const CandidateArc& a : arcs) committed.push_back(Transition::arc(a.dependent, a.head));
    state = apply_round(state, committed);
    out.derivation.rounds.push_back(std::move(committed));
    if (arcs.empty()) break;  // all-NULL round: nothing further can change
  }
  out.derivation.final_state = state;
  out.graph = state.to_graph();
  return out;
}

// Wraps a trained model as a RoundScorer for one sentence. The sentence
// encoding is computed once; each round rebuilds only the graph encoder and
// scoring layers, without dropout.
inline RoundScorer model_scorer(const Sentence& sent, ModelParams& params, TaskParams& task) {
  auto frozen = std::make_shared<FrozenEncoding>(freeze_encoding(sent, params));
  ModelParams* m = &params;
  TaskParams* tk = &task;
  return [frozen, m, tk](const ParserState& state) {
    ad::Tape tape;
    SentenceEncoding enc = inject_frozen(tape, *frozen);
    ScorerCache cache = make_scorer_cache(tape, enc, *tk, m->dims);
    ScoreOptions opt{false, 0.0};
    Rng rng(0);  // never drawn from in eval mode
    std::vector<std::vector<double>> rows(state.n() + 1);
    for (std::size_t w = 1; w <= state.n(); ++w) {
      TransitionRow row = score_transition_row(tape, state, w, enc, cache, *tk, m->dims, opt, rng);
      std::vector<double> scores = tape.value(row.scores);
      rows[w] = ad::masked_softmax(scores, row.mask);
    }
    return rows;
  };
}

// Argmax label for every arc; graph structure is unchanged.
inline SemanticGraph assign_labels(const Sentence& sent, const SemanticGraph& graph,
                                   ModelParams& params, TaskParams& task) {
  std::vector<Arc> arcs = graph.arcs();
  SemanticGraph labeled;
  if (arcs.empty()) return labeled;
  ad::Tape tape;
  ScoreOptions opt{false, 0.0};
  Rng rng(0);
  std::vector<int> scores = score_labels(tape, sent, arcs, params, task, opt, rng);
  const std::vector<std::string>& names = task.labels.items();
  for (std::size_t i = 0; i < arcs.size(); ++i) {
    std::vector<double> v = tape.value(scores[i]);
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k)
      if (v[k] > v[best]) best = k;
    labeled.add({arcs[i].head, arcs[i].dependent, names[best]});
  }
  return labeled;
}

// Full inference for one sentence: greedy parse plus labeling.
inline DecodeResult parse_sentence(const Sentence& sent, ModelParams& params, TaskParams& task,
                                   const DecodeOptions& opt = {}) {
  DecodeResult res = greedy_parse(sent.size(), model_scorer(sent, params, task), opt);
  res.graph = assign_labels(sent, res.graph, params, task);
  return res;
}

}  // namespace ips
