#pragma once

// Gradient verification suite: checks every tape primitive, the LSTM cell,
// a stacked bidirectional encoder, the composite transition scorer, and the
// arc labeler against central finite differences. Used by the `grad-check`
// CLI subcommand and the acceptance tests.

#include <cstdint>
#include <string>
#include <vector>

#include "ips/autodiff.hpp"
#include "ips/corpus.hpp"
#include "ips/model.hpp"

namespace ips {

struct GradCheckCase {
  std::string name;
  ad::GradCheckReport report;
};

namespace detail {

// One graph touching every primitive with a nontrivial backward rule.
// Dropout runs in train mode with a locally seeded generator so rebuilding
// the graph reproduces the same mask.
inline GradCheckCase check_primitives(std::uint64_t seed) {
  Rng init(seed);
  ad::Tensor w("w", {3, 5});
  ad::Tensor w2("w2", {2, 3});
  ad::Tensor table("table", {4, 3});
  ad::Tensor v("v", {5});
  ad::Tensor u("u", {3});
  for (ad::Tensor* t : {&w, &w2, &table, &v, &u}) ad::init_gaussian(*t, init, 0.5);

  auto build = [&](ad::Tape& t) {
    Rng drop(97);
    int x = t.param(v);
    int h = t.tanh_(t.matvec(w, x));                       // matvec + tanh
    int h2 = t.sigmoid(t.matvec_cols(w, t.param(u), 2));   // matvec_cols + sigmoid
    int row = t.lookup(table, 1);                          // lookup
    int m = t.mul(h, h2);                                  // mul
    int s = t.scale(t.add(m, row), 1.7);                   // add + scale
    int cat = t.concat({s, t.slice(x, 1, 2)});             // concat + slice
    int d = t.dropout(cat, 0.5, drop, true);               // dropout (fixed mask)
    int logits = t.matvec(w2, t.slice(d, 0, 3));
    int ls = t.pick(t.log_softmax(logits), 0);             // log_softmax + pick
    int ml = t.pick(t.masked_log_softmax(t.add(cat, t.constant(std::vector<double>(5, 0.1))),
                                         {1, 0, 1, 1, 0}),
                    2);                                    // masked variant + constant
    int ce = t.softmax_cross_entropy(logits, 1);           // cross entropy
    return t.add({t.sum(d), ls, ml, ce});                  // sum
  };
  std::vector<ad::Tensor*> tensors{&w, &w2, &table, &v, &u};
  return {"primitives", ad::grad_check(build, tensors)};
}

inline GradCheckCase check_lstm_cell(std::uint64_t seed) {
  Rng init(seed);
  ad::LstmParams p("cell", 4, 3);
  p.init(init);
  ad::init_gaussian(p.b, init, 0.3);  // nonzero biases so their gradients are exercised
  ad::Tensor x0("x0", {4}), x1("x1", {4});
  ad::init_gaussian(x0, init, 0.5);
  ad::init_gaussian(x1, init, 0.5);

  auto build = [&](ad::Tape& t) {
    ad::LstmState st{t.zeros(3), t.zeros(3)};
    st = ad::lstm_cell(t, p, t.param(x0), st);
    st = ad::lstm_cell(t, p, t.param(x1), st);
    return t.add(t.sum(st.h), t.sum(st.c));
  };
  std::vector<ad::Tensor*> tensors{&p.wx, &p.wh, &p.b, &x0, &x1};
  return {"lstm_cell", ad::grad_check(build, tensors)};
}

inline GradCheckCase check_bilstm_stack(std::uint64_t seed) {
  Rng init(seed);
  std::vector<BiLstmLayer> stack = make_bilstm_stack("enc", 2, 4, 3);
  for (BiLstmLayer& l : stack) {
    l.fwd.init(init);
    l.bwd.init(init);
    ad::init_gaussian(l.fwd.b, init, 0.3);
    ad::init_gaussian(l.bwd.b, init, 0.3);
  }
  ad::Tensor x0("x0", {4}), x1("x1", {4}), x2("x2", {4});
  for (ad::Tensor* t : {&x0, &x1, &x2}) ad::init_gaussian(*t, init, 0.5);

  auto build = [&](ad::Tape& t) {
    std::vector<int> xs{t.param(x0), t.param(x1), t.param(x2)};
    std::vector<int> hs = run_bilstm(t, stack, xs);
    std::vector<int> sums;
    for (int h : hs) sums.push_back(t.sum(h));
    return t.add(sums);
  };
  std::vector<ad::Tensor*> tensors{&x0, &x1, &x2};
  for (BiLstmLayer& l : stack)
    for (ad::Tensor* t : {&l.fwd.wx, &l.fwd.wh, &l.fwd.b, &l.bwd.wx, &l.bwd.wh, &l.bwd.b})
      tensors.push_back(t);
  return {"bilstm_stack", ad::grad_check(build, tensors)};
}

// Builds a miniature model plus a fixed synthetic sentence for the
// model-level checks.
struct ModelFixture {
  Corpus corpus;
  ModelParams params;
};

inline ModelFixture make_fixture(double scale, std::uint64_t seed) {
  GenConfig gen;
  gen.seed = seed;
  gen.size = 2;
  ModelFixture f;
  f.corpus = gen_synthetic(gen);
  ModelDims dims = ModelDims{}.scaled(scale);
  f.params = init_model(dims, build_vocab(f.corpus), {{"task", collect_labels(f.corpus)}}, seed);
  return f;
}

// Transition scores through the cached-block path, at a state with one arc
// built so the arc-present flag and graph encoder both carry gradient.
inline GradCheckCase check_scorer(double scale, std::uint64_t seed, std::size_t max_coords) {
  ModelFixture f = make_fixture(scale, seed);
  const Sentence& sent = f.corpus[0].first;
  TaskParams& task = f.params.task("task");

  ParserState state = ParserState::initial(sent.size());
  state = apply_round(state, {Transition::arc(1, 2), Transition::arc(2, 0)});

  auto build = [&](ad::Tape& t) {
    Rng drop(11);
    ScoreOptions opt{true, 0.25};  // exercise dropout's backward scaling
    SentenceEncoding enc = encode_sentence(t, sent, f.params);
    ScorerCache cache = make_scorer_cache(t, enc, task, f.params.dims);
    std::vector<int> terms;
    for (std::size_t w = 1; w <= std::min<std::size_t>(sent.size(), 3); ++w) {
      TransitionRow row =
          score_transition_row(t, state, w, enc, cache, task, f.params.dims, opt, drop);
      // Last legal column: an arc column for words 1..3 here, never masked.
      std::size_t col = 0;
      for (std::size_t k = 0; k < row.mask.size(); ++k)
        if (row.mask[k]) col = k;
      terms.push_back(t.pick(row.log_probs, col));
    }
    return t.add(terms);
  };

  std::vector<ad::Tensor*> tensors = f.params.shared_tensors();
  for (ad::Tensor* t : f.params.scorer_tensors("task")) tensors.push_back(t);
  Rng pick_rng(seed + 1);
  return {"transition_scorer", ad::grad_check(build, tensors, 1e-4, max_coords, &pick_rng)};
}

inline GradCheckCase check_labeler(double scale, std::uint64_t seed, std::size_t max_coords) {
  ModelFixture f = make_fixture(scale, seed);
  const Sentence& sent = f.corpus[0].first;
  const SemanticGraph& gold = f.corpus[0].second;
  TaskParams& task = f.params.task("task");
  std::vector<Arc> arcs = gold.arcs();

  auto build = [&](ad::Tape& t) {
    Rng drop(13);
    ScoreOptions opt{true, 0.25};
    std::vector<int> scores = score_labels(t, sent, arcs, f.params, task, opt, drop);
    std::vector<int> terms;
    for (std::size_t a = 0; a < arcs.size(); ++a)
      terms.push_back(t.softmax_cross_entropy(scores[a], task.labels.find(arcs[a].label)));
    return t.add(terms);
  };

  std::vector<ad::Tensor*> tensors;
  task.for_each_labeler([&](ad::Tensor& t) { tensors.push_back(&t); });
  tensors.push_back(&f.params.shared.word_table);
  tensors.push_back(&f.params.shared.pos_table);
  tensors.push_back(&f.params.shared.lemma_table);
  Rng pick_rng(seed + 2);
  return {"labeler", ad::grad_check(build, tensors, 1e-4, max_coords, &pick_rng)};
}

}  // namespace detail

// The full verification suite. `max_coords` caps probed coordinates per
// tensor for the model-level cases (primitives and the LSTM cell are always
// checked exhaustively).
inline std::vector<GradCheckCase> grad_check_suite(double scale = 0.05, std::uint64_t seed = 1,
                                                   std::size_t max_coords = 4) {
  std::vector<GradCheckCase> out;
  out.push_back(detail::check_primitives(seed));
  out.push_back(detail::check_lstm_cell(seed));
  out.push_back(detail::check_bilstm_stack(seed));
  out.push_back(detail::check_scorer(scale, seed, max_coords));
  out.push_back(detail::check_labeler(scale, seed, max_coords));
  return out;
}

inline double suite_max_rel_error(const std::vector<GradCheckCase>& cases) {
  double mx = 0.0;
  for (const GradCheckCase& c : cases) mx = std::max(mx, c.report.max_rel_error);
  return mx;
}

}  // namespace ips
