#pragma once

// The scoring network: a stacked BiLSTM sentence encoder, a partial-graph
// encoder with arc flags, a composite transition-scoring MLP, and a
// separate arc labeler with its own BiLSTM stack. Parameters are
// partitioned into a shared group (embeddings, special vectors, sentence
// encoder) used by every task and per-task groups (graph encoder, flags,
// scoring MLP, labeler).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ips/autodiff.hpp"
#include "ips/common.hpp"
#include "ips/corpus.hpp"
#include "ips/transition.hpp"

namespace ips {

struct ModelDims {
  std::size_t embed = 100;        // per-field embedding width
  std::size_t flag = 128;         // arc-flag vector width
  std::size_t enc_hidden = 600;   // sentence encoder hidden units per direction
  std::size_t enc_layers = 3;
  std::size_t graph_hidden = 200; // partial-graph encoder hidden units per direction
  std::size_t mlp_hidden = 4000;
  bool use_lemma = true;          // ablation switch: token input word+POS only

  // Shrinks every width by the same factor so reduced test profiles keep
  // the full-size layout ratios. Depth is preserved.
  static ModelDims scaled(double scale) {
    auto s = [&](std::size_t full) {
      return std::max<std::size_t>(1, static_cast<std::size_t>(full * scale + 0.5));
    };
    ModelDims d;
    d.embed = s(100);
    d.flag = s(128);
    d.enc_hidden = s(600);
    d.graph_hidden = s(200);
    d.mlp_hidden = s(4000);
    return d;
  }

  std::size_t token_dim() const { return (use_lemma ? 3 : 2) * embed; }
  std::size_t word_dim() const { return 2 * enc_hidden; }      // BiLSTM output
  std::size_t graph_dim() const { return 2 * graph_hidden; }
  std::size_t scorer_input_dim() const { return 2 * word_dim() + graph_dim() + flag; }
  std::size_t labeler_input_dim() const { return 2 * word_dim(); }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct BiLstmLayer {
  ad::LstmParams fwd, bwd;

  BiLstmLayer() = default;
  BiLstmLayer(const std::string& prefix, std::size_t input, std::size_t hidden)
      : fwd(prefix + "/fwd", input, hidden), bwd(prefix + "/bwd", input, hidden) {}
};

inline std::vector<BiLstmLayer> make_bilstm_stack(const std::string& prefix, std::size_t layers,
                                                  std::size_t input, std::size_t hidden) {
  std::vector<BiLstmLayer> stack;
  for (std::size_t l = 0; l < layers; ++l)
    stack.emplace_back(prefix + "/" + std::to_string(l), l == 0 ? input : 2 * hidden, hidden);
  return stack;
}

// The three-component scoring head: the sum of a three-layer tanh MLP, a
// two-layer tanh MLP, and a direct linear term, all over the same input.
struct CompositeMlp {
  ad::Tensor w3_1, b3_1, w3_2, b3_2, w3_3;
  ad::Tensor w2_1, b2_2, w2_2;
  ad::Tensor w1_1, b1_1;

  CompositeMlp() = default;
  CompositeMlp(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out)
      : w3_1(prefix + "/w3_1", {hidden, in}),
        b3_1(prefix + "/b3_1", {hidden}),
        w3_2(prefix + "/w3_2", {hidden, hidden}),
        b3_2(prefix + "/b3_2", {hidden}),
        w3_3(prefix + "/w3_3", {out, hidden}),
        w2_1(prefix + "/w2_1", {hidden, in}),
        b2_2(prefix + "/b2_2", {hidden}),
        w2_2(prefix + "/w2_2", {out, hidden}),
        w1_1(prefix + "/w1_1", {out, in}),
        b1_1(prefix + "/b1_1", {out}) {}

  std::size_t input_dim() const { return w3_1.cols(); }
  std::size_t output_dim() const { return w3_3.rows(); }

  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(w3_1); fn(b3_1); fn(w3_2); fn(b3_2); fn(w3_3);
    fn(w2_1); fn(b2_2); fn(w2_2);
    fn(w1_1); fn(b1_1);
  }
};

struct SharedParams {
  ad::Tensor word_table, pos_table, lemma_table;  // (vocab, embed)
  ad::Tensor u_root, u_none;                      // token-level specials (3*embed)
  std::vector<BiLstmLayer> encoder;
  ad::Tensor h_root, h_null;                      // contextual specials (2*enc_hidden)

  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(word_table); fn(pos_table); fn(lemma_table);
    fn(u_root); fn(u_none);
    for (BiLstmLayer& l : encoder) {
      fn(l.fwd.wx); fn(l.fwd.wh); fn(l.fwd.b);
      fn(l.bwd.wx); fn(l.bwd.wh); fn(l.bwd.b);
    }
    fn(h_root); fn(h_null);
  }
};

struct TaskParams {
  std::string name;
  StringMap labels;
  std::vector<BiLstmLayer> graph_encoder;  // single layer over head candidates
  ad::Tensor g_null;                        // (2*graph_hidden)
  ad::Tensor f_arc, f_noarc, f_null;        // (flag)
  CompositeMlp scorer;                      // -> 1
  std::vector<BiLstmLayer> labeler_encoder;
  ad::Tensor labeler_root;                  // head-side vector for root arcs
  CompositeMlp labeler;                     // -> label count

  // Tensors updated by reinforcement fine-tuning: everything the episode
  // loss can reach (the labeler trains only in the supervised stage).
  template <typename Fn>
  void for_each_scorer(Fn&& fn) {
    for (BiLstmLayer& l : graph_encoder) {
      fn(l.fwd.wx); fn(l.fwd.wh); fn(l.fwd.b);
      fn(l.bwd.wx); fn(l.bwd.wh); fn(l.bwd.b);
    }
    fn(g_null);
    fn(f_arc); fn(f_noarc); fn(f_null);
    scorer.for_each(fn);
  }

  template <typename Fn>
  void for_each_labeler(Fn&& fn) {
    for (BiLstmLayer& l : labeler_encoder) {
      fn(l.fwd.wx); fn(l.fwd.wh); fn(l.fwd.b);
      fn(l.bwd.wx); fn(l.bwd.wh); fn(l.bwd.b);
    }
    fn(labeler_root);
    labeler.for_each(fn);
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    for_each_scorer(fn);
    for_each_labeler(fn);
  }
};

struct ModelParams {
  ModelDims dims;
  Vocabulary vocab;
  SharedParams shared;
  std::vector<TaskParams> tasks;

  TaskParams& task(const std::string& name) {
    for (TaskParams& t : tasks)
      if (t.name == name) return t;
    throw usage_error("unknown task '" + name + "'");
  }
  const TaskParams& task(const std::string& name) const {
    return const_cast<ModelParams*>(this)->task(name);
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    shared.for_each(fn);
    for (TaskParams& t : tasks) t.for_each(fn);
  }

  std::vector<ad::Tensor*> shared_tensors() {
    std::vector<ad::Tensor*> out;
    shared.for_each([&](ad::Tensor& t) { out.push_back(&t); });
    return out;
  }
  std::vector<ad::Tensor*> task_tensors(const std::string& name) {
    std::vector<ad::Tensor*> out;
    task(name).for_each([&](ad::Tensor& t) { out.push_back(&t); });
    return out;
  }
  std::vector<ad::Tensor*> scorer_tensors(const std::string& name) {
    std::vector<ad::Tensor*> out;
    task(name).for_each_scorer([&](ad::Tensor& t) { out.push_back(&t); });
    return out;
  }
  std::vector<ad::Tensor*> all_tensors() {
    std::vector<ad::Tensor*> out;
    for_each_tensor([&](ad::Tensor& t) { out.push_back(&t); });
    return out;
  }
  void zero_grads() {
    for_each_tensor([](ad::Tensor& t) { t.zero_grad(); });
  }
};

// Expected tensor layout as (name, shape) pairs, computable without
// allocating any storage. Used to audit full-size configurations and kept
// honest by a test comparing it to an actually constructed model.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> tensor_layout(
    const ModelDims& d, std::size_t forms, std::size_t lemmas, std::size_t pos,
    const std::vector<std::pair<std::string, std::size_t>>& tasks) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  auto add = [&](const std::string& n, std::vector<std::size_t> s) {
    out.emplace_back(n, std::move(s));
  };
  auto add_lstm = [&](const std::string& p, std::size_t in, std::size_t hidden) {
    add(p + "/wx", {4 * hidden, in});
    add(p + "/wh", {4 * hidden, hidden});
    add(p + "/b", {4 * hidden});
  };
  auto add_stack = [&](const std::string& p, std::size_t layers, std::size_t in,
                       std::size_t hidden) {
    for (std::size_t l = 0; l < layers; ++l) {
      std::string lp = p + "/" + std::to_string(l);
      add_lstm(lp + "/fwd", l == 0 ? in : 2 * hidden, hidden);
      add_lstm(lp + "/bwd", l == 0 ? in : 2 * hidden, hidden);
    }
  };
  auto add_mlp = [&](const std::string& p, std::size_t in, std::size_t hidden, std::size_t o) {
    add(p + "/w3_1", {hidden, in});
    add(p + "/b3_1", {hidden});
    add(p + "/w3_2", {hidden, hidden});
    add(p + "/b3_2", {hidden});
    add(p + "/w3_3", {o, hidden});
    add(p + "/w2_1", {hidden, in});
    add(p + "/b2_2", {hidden});
    add(p + "/w2_2", {o, hidden});
    add(p + "/w1_1", {o, in});
    add(p + "/b1_1", {o});
  };

  add("shared/word_table", {forms, d.embed});
  add("shared/pos_table", {pos, d.embed});
  add("shared/lemma_table", {d.use_lemma ? lemmas : 0, d.embed});
  add("shared/u_root", {d.token_dim()});
  add("shared/u_none", {d.token_dim()});
  add_stack("shared/encoder", d.enc_layers, d.token_dim(), d.enc_hidden);
  add("shared/h_root", {d.word_dim()});
  add("shared/h_null", {d.word_dim()});
  for (const auto& [name, label_count] : tasks) {
    std::string p = "task/" + name;
    add_stack(p + "/graph", 1, d.token_dim(), d.graph_hidden);
    add(p + "/g_null", {d.graph_dim()});
    add(p + "/f_arc", {d.flag});
    add(p + "/f_noarc", {d.flag});
    add(p + "/f_null", {d.flag});
    add_mlp(p + "/scorer", d.scorer_input_dim(), d.mlp_hidden, 1);
    add_stack(p + "/labeler_enc", d.enc_layers, d.token_dim(), d.enc_hidden);
    add(p + "/labeler_root", {d.word_dim()});
    add_mlp(p + "/labeler", d.labeler_input_dim(), d.mlp_hidden, label_count);
  }
  return out;
}

// Builds the full parameter set with zero values.
inline ModelParams make_model(const ModelDims& dims, Vocabulary vocab,
                              const std::vector<std::pair<std::string, StringMap>>& tasks) {
  ModelParams m;
  m.dims = dims;
  m.vocab = std::move(vocab);
  m.shared.word_table = ad::Tensor("shared/word_table", {m.vocab.forms.size(), dims.embed});
  m.shared.pos_table = ad::Tensor("shared/pos_table", {m.vocab.pos.size(), dims.embed});
  m.shared.lemma_table = ad::Tensor(
      "shared/lemma_table", {dims.use_lemma ? m.vocab.lemmas.size() : 0, dims.embed});
  m.shared.u_root = ad::Tensor("shared/u_root", {dims.token_dim()});
  m.shared.u_none = ad::Tensor("shared/u_none", {dims.token_dim()});
  m.shared.encoder =
      make_bilstm_stack("shared/encoder", dims.enc_layers, dims.token_dim(), dims.enc_hidden);
  m.shared.h_root = ad::Tensor("shared/h_root", {dims.word_dim()});
  m.shared.h_null = ad::Tensor("shared/h_null", {dims.word_dim()});

  for (const auto& [name, labels] : tasks) {
    if (labels.size() == 0) throw usage_error("task '" + name + "' has no labels");
    TaskParams t;
    t.name = name;
    t.labels = labels;
    std::string p = "task/" + name;
    t.graph_encoder = make_bilstm_stack(p + "/graph", 1, dims.token_dim(), dims.graph_hidden);
    t.g_null = ad::Tensor(p + "/g_null", {dims.graph_dim()});
    t.f_arc = ad::Tensor(p + "/f_arc", {dims.flag});
    t.f_noarc = ad::Tensor(p + "/f_noarc", {dims.flag});
    t.f_null = ad::Tensor(p + "/f_null", {dims.flag});
    t.scorer = CompositeMlp(p + "/scorer", dims.scorer_input_dim(), dims.mlp_hidden, 1);
    t.labeler_encoder =
        make_bilstm_stack(p + "/labeler_enc", dims.enc_layers, dims.token_dim(), dims.enc_hidden);
    t.labeler_root = ad::Tensor(p + "/labeler_root", {dims.word_dim()});
    t.labeler = CompositeMlp(p + "/labeler", dims.labeler_input_dim(), dims.mlp_hidden,
                             labels.size());
    m.tasks.push_back(std::move(t));
  }
  return m;
}

// Random initialisation: Glorot for weight matrices, zeros for biases,
// small Gaussian for embeddings and learned feature vectors. Pre-trained
// vectors, when given, overwrite covered word/lemma rows.
inline ModelParams init_model(const ModelDims& dims, Vocabulary vocab,
                              const std::vector<std::pair<std::string, StringMap>>& tasks,
                              std::uint64_t seed, const PretrainedVectors* pretrained = nullptr) {
  ModelParams m = make_model(dims, std::move(vocab), tasks);
  Rng rng(seed);
  m.for_each_tensor([&](ad::Tensor& t) {
    std::string leaf = t.name.substr(t.name.rfind('/') + 1);
    bool is_bias = t.shape.size() == 1 && !leaf.empty() && leaf[0] == 'b';
    if (is_bias) return;  // biases stay zero
    if (t.shape.size() == 2 && t.name.find("table") == std::string::npos)
      ad::init_glorot(t, rng);
    else
      ad::init_gaussian(t, rng);  // embedding tables and learned feature vectors
  });
  if (pretrained) {
    auto fill = [&](ad::Tensor& table, const std::vector<std::string>& items,
                    const std::set<std::string>& covered) {
      for (std::size_t r = 0; r < items.size() && r < table.rows(); ++r) {
        const std::string& s = items[r];
        if (!covered.count(s)) continue;
        const auto& v = pretrained->at(s);
        if (v.size() != dims.embed)
          throw data_error("pre-trained vector for '" + s + "' has dim " +
                           std::to_string(v.size()) + ", expected " + std::to_string(dims.embed));
        for (std::size_t c = 0; c < dims.embed; ++c) table.at(r, c) = v[c];
      }
    };
    fill(m.shared.word_table, m.vocab.forms.items(), m.vocab.covered_forms);
    fill(m.shared.lemma_table, m.vocab.lemmas.items(), m.vocab.covered_lemmas);
  }
  return m;
}

// --- encoding -----------------------------------------------------------------

inline std::vector<int> run_bilstm(ad::Tape& t, std::vector<BiLstmLayer>& stack,
                                   std::vector<int> inputs) {
  std::vector<int> outputs;
  for (BiLstmLayer& layer : stack) {
    std::size_t n = inputs.size();
    std::size_t hidden = layer.fwd.hidden();
    std::vector<int> fwd(n), bwd(n);
    ad::LstmState s{t.zeros(hidden), t.zeros(hidden)};
    for (std::size_t i = 0; i < n; ++i) {
      s = ad::lstm_cell(t, layer.fwd, inputs[i], s);
      fwd[i] = s.h;
    }
    s = {t.zeros(hidden), t.zeros(hidden)};
    for (std::size_t i = n; i-- > 0;) {
      s = ad::lstm_cell(t, layer.bwd, inputs[i], s);
      bwd[i] = s.h;
    }
    outputs.resize(n);
    for (std::size_t i = 0; i < n; ++i) outputs[i] = t.concat({fwd[i], bwd[i]});
    inputs = outputs;
  }
  return outputs;
}

struct SentenceEncoding {
  std::vector<int> u;  // token embeddings per word (index word-1)
  int u_root = -1, u_none = -1;
  std::vector<int> h;  // contextual vectors per word
  int h_root = -1, h_null = -1;
};

inline std::vector<int> embed_tokens(ad::Tape& t, const Sentence& sent, ModelParams& m) {
  std::vector<int> u;
  u.reserve(sent.size());
  for (const Token& tok : sent.tokens) {
    int w = t.lookup(m.shared.word_table, m.vocab.form_id(tok.form));
    int p = t.lookup(m.shared.pos_table, m.vocab.pos_id(tok.pos));
    if (m.dims.use_lemma) {
      int l = t.lookup(m.shared.lemma_table, m.vocab.lemma_id(tok.lemma));
      u.push_back(t.concat({w, p, l}));
    } else {
      u.push_back(t.concat({w, p}));
    }
  }
  return u;
}

inline SentenceEncoding encode_sentence(ad::Tape& t, const Sentence& sent, ModelParams& m) {
  SentenceEncoding enc;
  enc.u = embed_tokens(t, sent, m);
  enc.u_root = t.param(m.shared.u_root);
  enc.u_none = t.param(m.shared.u_none);
  enc.h = run_bilstm(t, m.shared.encoder, enc.u);
  enc.h_root = t.param(m.shared.h_root);
  enc.h_null = t.param(m.shared.h_null);
  return enc;
}

// Sentence-encoder outputs captured as plain values. During reinforcement
// fine-tuning the shared parameters are frozen, so the expensive sentence
// encoding can be computed once per sentence and re-injected into episode
// tapes as constants.
struct FrozenEncoding {
  std::vector<std::vector<double>> u;
  std::vector<double> u_root, u_none;
  std::vector<std::vector<double>> h;
  std::vector<double> h_root, h_null;
};

inline FrozenEncoding freeze_encoding(const Sentence& sent, ModelParams& m) {
  ad::Tape t;
  SentenceEncoding enc = encode_sentence(t, sent, m);
  FrozenEncoding out;
  for (int id : enc.u) out.u.push_back(t.value(id));
  for (int id : enc.h) out.h.push_back(t.value(id));
  out.u_root = t.value(enc.u_root);
  out.u_none = t.value(enc.u_none);
  out.h_root = t.value(enc.h_root);
  out.h_null = t.value(enc.h_null);
  return out;
}

inline SentenceEncoding inject_frozen(ad::Tape& t, const FrozenEncoding& f) {
  SentenceEncoding enc;
  for (const auto& v : f.u) enc.u.push_back(t.constant(v));
  for (const auto& v : f.h) enc.h.push_back(t.constant(v));
  enc.u_root = t.constant(f.u_root);
  enc.u_none = t.constant(f.u_none);
  enc.h_root = t.constant(f.h_root);
  enc.h_null = t.constant(f.h_null);
  return enc;
}

// Partial-graph encoding for one dependent row: a BiLSTM over the head
// candidates (root first, then each word), reading the head's token
// embedding where the arc exists and the shared no-arc symbol elsewhere.
// Returns one vector per head candidate column 0..n.
inline std::vector<int> encode_graph_row(ad::Tape& t, const ParserState& state, std::size_t word,
                                         const SentenceEncoding& enc, TaskParams& task) {
  std::vector<int> inputs;
  inputs.reserve(state.n() + 1);
  for (std::size_t h = 0; h <= state.n(); ++h) {
    bool present = state.has_arc(word, h);
    int u_head = h == 0 ? enc.u_root : enc.u[h - 1];
    inputs.push_back(present ? u_head : enc.u_none);
  }
  return run_bilstm(t, task.graph_encoder, std::move(inputs));
}

// --- transition scoring ---------------------------------------------------------

struct ScoreOptions {
  bool train = false;
  double dropout = 0.5;
};

// First-layer products of the composite MLP, cached per tape. The MLP
// input is the concatenation [h_dep | h_head | g | f]; multiplying each
// block separately lets per-word and per-sentence pieces be reused across
// rounds and pairs. Flag block index: 0 = no-arc, 1 = arc, 2 = NULL.
struct ScorerCache {
  std::vector<int> dep3, dep2, dep1;     // per word (index word-1)
  std::vector<int> head3, head2, head1;  // per head column 0..n (root at 0)
  int null3 = -1, null2 = -1, null1 = -1;        // h_null in the head slot
  int gnull3 = -1, gnull2 = -1, gnull1 = -1;     // g_null block
  int flag3[3] = {-1, -1, -1}, flag2[3] = {-1, -1, -1}, flag1[3] = {-1, -1, -1};
  int b31 = -1, b22 = -1, b11 = -1;
};

inline ScorerCache make_scorer_cache(ad::Tape& t, const SentenceEncoding& enc, TaskParams& task,
                                     const ModelDims& dims) {
  ScorerCache c;
  CompositeMlp& m = task.scorer;
  std::size_t off_head = dims.word_dim();
  std::size_t off_g = 2 * dims.word_dim();
  std::size_t off_f = off_g + dims.graph_dim();

  for (int h_i : enc.h) {
    c.dep3.push_back(t.matvec_cols(m.w3_1, h_i, 0));
    c.dep2.push_back(t.matvec_cols(m.w2_1, h_i, 0));
    c.dep1.push_back(t.matvec_cols(m.w1_1, h_i, 0));
  }
  c.head3.push_back(t.matvec_cols(m.w3_1, enc.h_root, off_head));
  c.head2.push_back(t.matvec_cols(m.w2_1, enc.h_root, off_head));
  c.head1.push_back(t.matvec_cols(m.w1_1, enc.h_root, off_head));
  for (int h_j : enc.h) {
    c.head3.push_back(t.matvec_cols(m.w3_1, h_j, off_head));
    c.head2.push_back(t.matvec_cols(m.w2_1, h_j, off_head));
    c.head1.push_back(t.matvec_cols(m.w1_1, h_j, off_head));
  }
  c.null3 = t.matvec_cols(m.w3_1, enc.h_null, off_head);
  c.null2 = t.matvec_cols(m.w2_1, enc.h_null, off_head);
  c.null1 = t.matvec_cols(m.w1_1, enc.h_null, off_head);

  int gnull = t.param(task.g_null);
  c.gnull3 = t.matvec_cols(m.w3_1, gnull, off_g);
  c.gnull2 = t.matvec_cols(m.w2_1, gnull, off_g);
  c.gnull1 = t.matvec_cols(m.w1_1, gnull, off_g);

  ad::Tensor* flags[3] = {&task.f_noarc, &task.f_arc, &task.f_null};
  for (int v = 0; v < 3; ++v) {
    int f = t.param(*flags[v]);
    c.flag3[v] = t.matvec_cols(m.w3_1, f, off_f);
    c.flag2[v] = t.matvec_cols(m.w2_1, f, off_f);
    c.flag1[v] = t.matvec_cols(m.w1_1, f, off_f);
  }
  c.b31 = t.param(m.b3_1);
  c.b22 = t.param(m.b2_2);
  c.b11 = t.param(m.b1_1);
  return c;
}

// Assembles one pair score from cached first-layer blocks. The result is
// numerically identical to running the composite MLP on the concatenated
// input.
inline int assemble_score(ad::Tape& t, CompositeMlp& m, const ScorerCache& c, std::size_t word,
                          int head3, int head2, int head1, int g3, int g2, int g1, int flag_idx,
                          const ScoreOptions& opt, Rng& rng) {
  std::size_t i = word - 1;
  int pre3 = t.add({c.dep3[i], head3, g3, c.flag3[flag_idx], c.b31});
  int a3 = t.dropout(t.tanh_(pre3), opt.dropout, rng, opt.train);
  int a3b = t.dropout(t.tanh_(t.add(t.matvec(m.w3_2, a3), t.param(m.b3_2))), opt.dropout, rng,
                      opt.train);
  int out3 = t.matvec(m.w3_3, a3b);
  int pre2 = t.add({c.dep2[i], head2, g2, c.flag2[flag_idx], c.b22});
  int a2 = t.dropout(t.tanh_(pre2), opt.dropout, rng, opt.train);
  int out2 = t.matvec(m.w2_2, a2);
  int out1 = t.add({c.dep1[i], head1, g1, c.flag1[flag_idx], c.b11});
  return t.add(out3, out2, out1);
}

// Scores for one word's transition row at the current state: column 0 =
// NULL, column 1 = root arc, column 1+j = arc from word j. Illegal columns
// hold a constant zero and are excluded by the mask.
struct TransitionRow {
  std::size_t word = 0;
  int scores = -1;            // concatenated score vector node (n+2)
  int log_probs = -1;         // masked log-softmax node
  std::vector<char> mask;
};

inline TransitionRow score_transition_row(ad::Tape& t, const ParserState& state, std::size_t word,
                                          const SentenceEncoding& enc, ScorerCache& cache,
                                          TaskParams& task, const ModelDims& dims,
                                          const ScoreOptions& opt, Rng& rng) {
  std::vector<int> g_row = encode_graph_row(t, state, word, enc, task);
  CompositeMlp& m = task.scorer;
  std::size_t off_g = 2 * dims.word_dim();

  TransitionRow row;
  row.word = word;
  row.mask = legality_mask(state, word);
  std::vector<int> cols(state.n() + 2, -1);

  // NULL column: every block is cached.
  cols[0] = assemble_score(t, m, cache, word, cache.null3, cache.null2, cache.null1, cache.gnull3,
                           cache.gnull2, cache.gnull1, 2, opt, rng);
  for (std::size_t h = 0; h <= state.n(); ++h) {
    if (!row.mask[1 + h]) {
      cols[1 + h] = t.zeros(1);
      continue;
    }
    int g3 = t.matvec_cols(m.w3_1, g_row[h], off_g);
    int g2 = t.matvec_cols(m.w2_1, g_row[h], off_g);
    int g1 = t.matvec_cols(m.w1_1, g_row[h], off_g);
    int flag_idx = state.has_arc(word, h) ? 1 : 0;
    cols[1 + h] = assemble_score(t, m, cache, word, cache.head3[h], cache.head2[h], cache.head1[h],
                                 g3, g2, g1, flag_idx, opt, rng);
  }
  row.scores = t.concat(cols);
  row.log_probs = t.masked_log_softmax(row.scores, row.mask);
  return row;
}

// Scores every requested word's transition row at the given state (all
// words when `words` is empty).
inline std::vector<TransitionRow> score_transitions(ad::Tape& t, const ParserState& state,
                                                    const SentenceEncoding& enc,
                                                    ScorerCache& cache, TaskParams& task,
                                                    const ModelDims& dims,
                                                    const std::vector<std::size_t>& words,
                                                    const ScoreOptions& opt, Rng& rng) {
  std::vector<TransitionRow> rows;
  if (words.empty()) {
    rows.reserve(state.n());
    for (std::size_t w = 1; w <= state.n(); ++w)
      rows.push_back(score_transition_row(t, state, w, enc, cache, task, dims, opt, rng));
  } else {
    rows.reserve(words.size());
    for (std::size_t w : words)
      rows.push_back(score_transition_row(t, state, w, enc, cache, task, dims, opt, rng));
  }
  return rows;
}

// Reference (unblocked) composite MLP application; the labeler uses it and
// tests compare it against the cached block assembly.
inline int mlp_apply(ad::Tape& t, CompositeMlp& m, int x, const ScoreOptions& opt, Rng& rng) {
  int a3 = t.dropout(t.tanh_(t.add(t.matvec(m.w3_1, x), t.param(m.b3_1))), opt.dropout, rng,
                     opt.train);
  int a3b = t.dropout(t.tanh_(t.add(t.matvec(m.w3_2, a3), t.param(m.b3_2))), opt.dropout, rng,
                      opt.train);
  int out3 = t.matvec(m.w3_3, a3b);
  int a2 = t.dropout(t.tanh_(t.add(t.matvec(m.w2_1, x), t.param(m.b2_2))), opt.dropout, rng,
                     opt.train);
  int out2 = t.matvec(m.w2_2, a2);
  int out1 = t.add(t.matvec(m.w1_1, x), t.param(m.b1_1));
  return t.add(out3, out2, out1);
}

// --- labeling -------------------------------------------------------------------

// Label score vectors (one node of width |labels| per arc) from the
// labeler's own BiLSTM stack over the sentence.
inline std::vector<int> score_labels(ad::Tape& t, const Sentence& sent,
                                     const std::vector<Arc>& arcs, ModelParams& m, TaskParams& task,
                                     const ScoreOptions& opt, Rng& rng) {
  std::vector<int> u = embed_tokens(t, sent, m);
  std::vector<int> h = run_bilstm(t, task.labeler_encoder, u);
  int h_root = t.param(task.labeler_root);
  std::vector<int> out;
  out.reserve(arcs.size());
  for (const Arc& a : arcs) {
    if (a.dependent < 1 || a.dependent > sent.size() || a.head > sent.size())
      throw error("score_labels: arc out of range");
    int x = t.concat({h[a.dependent - 1], a.head == 0 ? h_root : h[a.head - 1]});
    out.push_back(mlp_apply(t, task.labeler, x, opt, rng));
  }
  return out;
}

// --- checkpoints -----------------------------------------------------------------
//
// Binary container: magic, version, a JSON header describing dimensions,
// vocabulary and tasks, then named tensors with shapes and raw little-
// endian doubles. Loading rebuilds the model structure from the header and
// fills tensors by name.

inline constexpr char kCheckpointMagic[8] = {'I', 'P', 'S', 'C', 'K', 'P', 'T', '1'};

inline void save_model(ModelParams& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path);

  nlohmann::json header;
  header["dims"] = {{"embed", m.dims.embed},
                    {"flag", m.dims.flag},
                    {"enc_hidden", m.dims.enc_hidden},
                    {"enc_layers", m.dims.enc_layers},
                    {"graph_hidden", m.dims.graph_hidden},
                    {"mlp_hidden", m.dims.mlp_hidden},
                    {"use_lemma", m.dims.use_lemma}};
  header["vocab"] = {{"forms", m.vocab.forms.items()},
                     {"lemmas", m.vocab.lemmas.items()},
                     {"pos", m.vocab.pos.items()},
                     {"labels", m.vocab.labels.items()},
                     {"covered_forms", std::vector<std::string>(m.vocab.covered_forms.begin(),
                                                                m.vocab.covered_forms.end())},
                     {"covered_lemmas", std::vector<std::string>(m.vocab.covered_lemmas.begin(),
                                                                 m.vocab.covered_lemmas.end())}};
  header["tasks"] = nlohmann::json::array();
  for (const TaskParams& t : m.tasks)
    header["tasks"].push_back({{"name", t.name}, {"labels", t.labels.items()}});
  std::string header_str = header.dump();

  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  std::uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), static_cast<std::streamsize>(hlen));

  std::uint64_t count = 0;
  m.for_each_tensor([&](ad::Tensor&) { ++count; });
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  m.for_each_tensor([&](ad::Tensor& t) {
    std::uint64_t nlen = t.name.size();
    out.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
    out.write(t.name.data(), static_cast<std::streamsize>(nlen));
    std::uint32_t rank = static_cast<std::uint32_t>(t.shape.size());
    out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (std::size_t d : t.shape) {
      std::uint64_t dd = d;
      out.write(reinterpret_cast<const char*>(&dd), sizeof(dd));
    }
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  });
  if (!out) throw data_error("write failed: " + path);
}

inline ModelParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw data_error(path + ": not a checkpoint file");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != 1)
    throw data_error(path + ": unsupported checkpoint version " + std::to_string(version));
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw data_error(path + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const std::exception& e) {
    throw data_error(path + ": bad header: " + e.what());
  }

  ModelDims dims;
  dims.embed = header["dims"]["embed"].get<std::size_t>();
  dims.flag = header["dims"]["flag"].get<std::size_t>();
  dims.enc_hidden = header["dims"]["enc_hidden"].get<std::size_t>();
  dims.enc_layers = header["dims"]["enc_layers"].get<std::size_t>();
  dims.graph_hidden = header["dims"]["graph_hidden"].get<std::size_t>();
  dims.mlp_hidden = header["dims"]["mlp_hidden"].get<std::size_t>();
  dims.use_lemma = header["dims"].value("use_lemma", true);

  Vocabulary vocab;
  auto load_map = [&](StringMap& map, const nlohmann::json& arr, bool has_unk) {
    std::size_t i = 0;
    for (const auto& s : arr) {
      std::string str = s.get<std::string>();
      if (has_unk && i == 0 && str != Vocabulary::kUnkText)
        throw data_error(path + ": vocab does not start with unk symbol");
      map.add(str);
      ++i;
    }
  };
  // the maps were constructed with <unk> pre-inserted; re-adding is a no-op
  load_map(vocab.forms, header["vocab"]["forms"], true);
  load_map(vocab.lemmas, header["vocab"]["lemmas"], true);
  load_map(vocab.pos, header["vocab"]["pos"], true);
  if (header["vocab"].contains("labels")) load_map(vocab.labels, header["vocab"]["labels"], false);
  for (const auto& s : header["vocab"]["covered_forms"])
    vocab.covered_forms.insert(s.get<std::string>());
  for (const auto& s : header["vocab"]["covered_lemmas"])
    vocab.covered_lemmas.insert(s.get<std::string>());

  std::vector<std::pair<std::string, StringMap>> tasks;
  for (const auto& t : header["tasks"]) {
    StringMap labels;
    for (const auto& s : t["labels"]) labels.add(s.get<std::string>());
    tasks.emplace_back(t["name"].get<std::string>(), std::move(labels));
  }

  ModelParams m = make_model(dims, std::move(vocab), tasks);
  std::map<std::string, ad::Tensor*> by_name;
  m.for_each_tensor([&](ad::Tensor& t) { by_name[t.name] = &t; });

  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  for (std::uint64_t k = 0; k < count; ++k) {
    std::uint64_t nlen = 0;
    in.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
    std::string name(nlen, '\0');
    in.read(name.data(), static_cast<std::streamsize>(nlen));
    std::uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t r = 0; r < rank; ++r) {
      std::uint64_t d = 0;
      in.read(reinterpret_cast<char*>(&d), sizeof(d));
      shape[r] = d;
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) throw data_error(path + ": unexpected tensor '" + name + "'");
    ad::Tensor& t = *it->second;
    if (t.shape != shape)
      throw data_error(path + ": tensor '" + name + "' has unexpected shape");
    in.read(reinterpret_cast<char*>(t.value.data()),
            static_cast<std::streamsize>(t.value.size() * sizeof(double)));
    if (!in) throw data_error(path + ": truncated tensor data");
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw data_error(path + ": missing tensor '" + by_name.begin()->first + "'");
  return m;
}

}  // namespace ips
