#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <vector>

#include "ips/transition.hpp"

using namespace ips;

namespace {

// All semantic graphs over n words where each word independently takes any
// subset of {root, other words} as heads. Labels are the placeholder so the
// results compare directly against ParserState::to_graph().
std::vector<SemanticGraph> all_graphs(std::size_t n) {
  std::vector<std::vector<std::size_t>> head_choices(n + 1);
  for (std::size_t d = 1; d <= n; ++d)
    for (std::size_t h = 0; h <= n; ++h)
      if (h != d) head_choices[d].push_back(h);

  std::size_t per_word = 1u << head_choices[1].size();
  std::size_t total = 1;
  for (std::size_t d = 1; d <= n; ++d) total *= per_word;

  std::vector<SemanticGraph> graphs;
  graphs.reserve(total);
  for (std::size_t code = 0; code < total; ++code) {
    SemanticGraph g;
    std::size_t rest = code;
    for (std::size_t d = 1; d <= n; ++d) {
      std::size_t bits = rest % per_word;
      rest /= per_word;
      for (std::size_t j = 0; j < head_choices[d].size(); ++j)
        if (bits & (1u << j)) g.add({head_choices[d][j], d, "_"});
    }
    graphs.push_back(std::move(g));
  }
  return graphs;
}

}  // namespace

TEST_CASE("transition column layout is a bijection") {
  const std::size_t n = 5, word = 3;
  std::set<std::size_t> seen;
  for (std::size_t col = 0; col <= n + 1; ++col) {
    Transition t = transition_at(word, col);
    CHECK(column_of(t) == col);
    CHECK(t.dependent == word);
    if (col == 0) {
      CHECK(t.is_null());
    } else {
      CHECK_FALSE(t.is_null());
      CHECK(t.head == col - 1);
    }
    seen.insert(column_of(t));
  }
  CHECK(seen.size() == n + 2);
  CHECK(column_of(Transition::null_for(2)) == 0);
  CHECK(column_of(Transition::arc(2, 0)) == 1);
  CHECK(column_of(Transition::arc(2, 4)) == 5);
}

TEST_CASE("fresh state has no arcs and no finished words") {
  ParserState s = ParserState::initial(4);
  CHECK(s.n() == 4);
  CHECK(s.time_step() == 0);
  CHECK(s.arc_count() == 0);
  CHECK_FALSE(s.all_finished());
  for (std::size_t d = 1; d <= 4; ++d) {
    CHECK(s.heads_of(d).empty());
    CHECK_FALSE(s.finished(d));
  }
  CHECK(s.to_graph().empty());
}

TEST_CASE("apply_round accumulates arcs and advances time") {
  ParserState s = ParserState::initial(3);
  s = apply_round(s, {Transition::arc(1, 2), Transition::null_for(2), Transition::arc(3, 0)});
  CHECK(s.time_step() == 1);
  CHECK(s.arc_count() == 2);
  CHECK(s.has_arc(1, 2));
  CHECK(s.has_arc(3, 0));
  CHECK_FALSE(s.has_arc(2, 1));
  CHECK(s.heads_of(1) == std::vector<std::size_t>{2});

  ParserState s2 = apply_round(s, {Transition::arc(1, 0)});
  CHECK(s2.time_step() == 2);
  CHECK(s2.heads_of(1) == std::vector<std::size_t>{0, 2});
  // value semantics: the earlier state is untouched
  CHECK(s.arc_count() == 2);

  // empty round still advances time
  ParserState s3 = apply_round(s2, {});
  CHECK(s3.time_step() == 3);
  CHECK(s3.arc_count() == s2.arc_count());
}

TEST_CASE("apply_round rejects malformed rounds") {
  ParserState s = ParserState::initial(3);
  s = apply_round(s, {Transition::arc(1, 2)});
  CHECK_THROWS_AS(apply_round(s, {Transition::arc(1, 2)}), error);               // duplicate arc
  CHECK_THROWS_AS(apply_round(s, {Transition::arc(2, 2)}), error);               // reflexive
  CHECK_THROWS_AS(apply_round(s, {Transition::arc(0, 1)}), error);               // bad dependent
  CHECK_THROWS_AS(apply_round(s, {Transition::arc(4, 1)}), error);               // bad dependent
  CHECK_THROWS_AS(apply_round(s, {Transition::arc(1, 4)}), error);               // bad head
  CHECK_THROWS_AS(
      apply_round(s, {Transition::arc(2, 1), Transition::null_for(2)}), error);  // two for one word
  s.set_finished(2);
  CHECK_THROWS_AS(apply_round(s, {Transition::null_for(2)}), error);             // finished word
}

TEST_CASE("legality mask mirrors the legal transition list") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t n = 2 + rng.index(5);
    ParserState s = ParserState::initial(n);
    std::size_t rounds = rng.index(4);
    for (std::size_t r = 0; r < rounds; ++r) {
      std::vector<Transition> chosen;
      for (std::size_t w = 1; w <= n; ++w) {
        std::vector<Transition> legal = legal_transitions(s, w);
        chosen.push_back(legal[rng.index(legal.size())]);
      }
      s = apply_round(s, chosen);
    }
    for (std::size_t w = 1; w <= n; ++w) {
      std::vector<char> mask = legality_mask(s, w);
      REQUIRE(mask.size() == n + 2);
      std::vector<Transition> legal = legal_transitions(s, w);
      std::set<std::size_t> legal_cols;
      for (const Transition& t : legal) legal_cols.insert(column_of(t));
      CHECK(legal_cols.size() == legal.size());
      for (std::size_t col = 0; col < mask.size(); ++col)
        CHECK(static_cast<bool>(mask[col]) == (legal_cols.count(col) > 0));
      CHECK(mask[0] == 1);            // NULL is always available
      CHECK(mask[1 + w] == 0);        // never the word itself
      CHECK(legal[0].is_null());      // NULL listed first
    }
  }
}

TEST_CASE("argmax prefers the smallest column on ties and obeys the mask") {
  std::vector<double> scores{5.0, 9.0, 9.0, 1.0};
  CHECK(argmax_column(scores, {1, 1, 1, 1}) == 1);
  CHECK(argmax_column(scores, {1, 0, 1, 1}) == 2);
  CHECK(argmax_column(scores, {1, 0, 0, 1}) == 0);
  CHECK(argmax_column(scores, {0, 0, 0, 1}) == 3);
  CHECK_THROWS_AS(argmax_column(scores, {0, 0, 0, 0}), error);
}

TEST_CASE("sampling follows the probability row") {
  std::vector<double> probs{0.25, 0.0, 0.75};
  Rng rng(23);
  std::size_t hits0 = 0, hits2 = 0;
  for (int i = 0; i < 4000; ++i) {
    std::size_t k = sample_column(probs, rng);
    REQUIRE(k != 1);  // zero probability is never drawn
    if (k == 0) ++hits0;
    if (k == 2) ++hits2;
  }
  CHECK(hits0 + hits2 == 4000);
  CHECK(hits0 > 4000 * 0.20);
  CHECK(hits0 < 4000 * 0.30);

  // a row that underflows 1.0 by epsilon still returns a positive column
  std::vector<double> short_row{0.5, 0.5 - 1e-13};
  for (int i = 0; i < 100; ++i) {
    std::size_t k = sample_column(short_row, rng);
    CHECK(k <= 1);
  }
}

TEST_CASE("terminal rounds contain only NULL transitions") {
  CHECK(is_terminal_round({}));
  CHECK(is_terminal_round({Transition::null_for(1), Transition::null_for(2)}));
  CHECK_FALSE(is_terminal_round({Transition::null_for(1), Transition::arc(2, 1)}));
}

TEST_CASE("oracle replay reaches every reachable graph exactly: exhaustive n=3") {
  std::vector<SemanticGraph> graphs = all_graphs(3);
  REQUIRE(graphs.size() == 512);

  Sentence sent;
  sent.id = "enum";
  for (std::size_t i = 1; i <= 3; ++i)
    sent.tokens.push_back({i, "w" + std::to_string(i), "w", "N"});

  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Rng rng(seed);
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
      const SemanticGraph& gold = graphs[gi];
      Derivation d = replay_oracle(sent, gold, rng);
      INFO("seed " << seed << " graph " << gi);

      // final state reproduces the gold arc set exactly
      CHECK(d.final_state.to_graph() == gold);
      CHECK_FALSE(d.hit_round_cap);

      // round count: one arc per word per round, so the longest head list
      // sets the arc-building prefix, then one terminal all-NULL round
      std::size_t max_heads = 0;
      for (std::size_t w = 1; w <= 3; ++w)
        max_heads = std::max(max_heads, gold.heads_of(w).size());
      CHECK(d.rounds.size() == max_heads + 1);
      REQUIRE(!d.rounds.empty());
      CHECK(is_terminal_round(d.rounds.back()));
      for (std::size_t r = 0; r + 1 < d.rounds.size(); ++r)
        CHECK_FALSE(is_terminal_round(d.rounds[r]));

      // each non-terminal round assigns at most one new head per word
      for (const auto& round : d.rounds) {
        std::set<std::size_t> deps;
        for (const Transition& t : round)
          if (!t.is_null()) CHECK(deps.insert(t.dependent).second);
      }
    }
  }
}

TEST_CASE("oracle targets reject states containing non-gold arcs") {
  SemanticGraph gold;
  gold.add({0, 1, "_"});
  ParserState s = ParserState::initial(2);
  s = apply_round(s, {Transition::arc(2, 1)});  // not in gold
  Rng rng(4);
  CHECK_THROWS_AS(oracle_targets(s, gold, rng), error);
}

TEST_CASE("state equality covers arcs, flags, and time") {
  ParserState a = ParserState::initial(2);
  ParserState b = ParserState::initial(2);
  CHECK(a == b);
  ParserState c = apply_round(a, {});
  CHECK_FALSE(a == c);  // time step differs
  b.set_finished(1);
  CHECK_FALSE(a == b);
  ParserState d = apply_round(a, {Transition::arc(1, 0)});
  ParserState e = apply_round(a, {Transition::arc(1, 0)});
  CHECK(d == e);
}
