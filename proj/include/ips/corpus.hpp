#pragma once

// Sentences, dependency graphs, the SDP tab-separated file format, the
// vocabulary, and a deterministic synthetic corpus generator used by the
// test and sample tooling.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ips/common.hpp"

namespace ips {

struct Token {
  std::size_t index = 0;  // 1-based position
  std::string form;
  std::string lemma;
  std::string pos;
};

struct Sentence {
  std::string id;
  std::vector<Token> tokens;
  std::size_t size() const { return tokens.size(); }
};

// head == 0 denotes the virtual root.
struct Arc {
  std::size_t head = 0;
  std::size_t dependent = 0;
  std::string label;

  friend bool operator==(const Arc& a, const Arc& b) {
    return a.head == b.head && a.dependent == b.dependent && a.label == b.label;
  }
  friend bool operator<(const Arc& a, const Arc& b) {
    if (a.head != b.head) return a.head < b.head;
    if (a.dependent != b.dependent) return a.dependent < b.dependent;
    return a.label < b.label;
  }
};

// A set of labelled arcs with the structural invariants of the transition
// system: no reflexive arcs and at most one arc per (head, dependent) pair.
// Arcs iterate in (head, dependent) order, which keeps downstream output
// deterministic.
class SemanticGraph {
 public:
  void add(Arc arc) {
    if (arc.head == arc.dependent)
      throw data_error("SemanticGraph: reflexive arc on token " + std::to_string(arc.head));
    auto key = std::make_pair(arc.head, arc.dependent);
    if (labels_.count(key))
      throw data_error("SemanticGraph: duplicate arc " + std::to_string(arc.head) + " -> " +
                       std::to_string(arc.dependent));
    labels_.emplace(key, arc.label);
  }

  bool has(std::size_t head, std::size_t dependent) const {
    return labels_.count({head, dependent}) > 0;
  }

  const std::string* label(std::size_t head, std::size_t dependent) const {
    auto it = labels_.find({head, dependent});
    return it == labels_.end() ? nullptr : &it->second;
  }

  std::vector<std::size_t> heads_of(std::size_t dependent) const {
    std::vector<std::size_t> out;
    for (const auto& [key, label] : labels_)
      if (key.second == dependent) out.push_back(key.first);
    return out;
  }

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

  std::vector<Arc> arcs() const {
    std::vector<Arc> out;
    out.reserve(labels_.size());
    for (const auto& [key, label] : labels_) out.push_back({key.first, key.second, label});
    return out;
  }

  friend bool operator==(const SemanticGraph& a, const SemanticGraph& b) {
    return a.labels_ == b.labels_;
  }

 private:
  std::map<std::pair<std::size_t, std::size_t>, std::string> labels_;
};

// True when the word-to-word arcs contain no directed cycle (edges run from
// head to dependent; the root can never be part of a cycle).
inline bool is_acyclic(const SemanticGraph& g, std::size_t n) {
  std::vector<std::vector<std::size_t>> out(n + 1);
  for (const Arc& a : g.arcs())
    if (a.head != 0) out[a.head].push_back(a.dependent);
  std::vector<int> color(n + 1, 0);
  std::function<bool(std::size_t)> dfs = [&](std::size_t u) {
    color[u] = 1;
    for (std::size_t v : out[u]) {
      if (color[v] == 1) return false;
      if (color[v] == 0 && !dfs(v)) return false;
    }
    color[u] = 2;
    return true;
  };
  for (std::size_t u = 1; u <= n; ++u)
    if (color[u] == 0 && !dfs(u)) return false;
  return true;
}

using CorpusEntry = std::pair<Sentence, SemanticGraph>;
using Corpus = std::vector<CorpusEntry>;

// --- SDP file format ---------------------------------------------------------
//
// One block per sentence, blocks separated by a blank line. A block starts
// with an optional `#<id>` comment line followed by one line per token with
// tab-separated columns:
//
//   ID  FORM  LEMMA  POS  TOP  PRED  FRAME  ARG_1 ... ARG_k
//
// TOP and PRED are `+` or `-`. k equals the number of tokens whose PRED
// column is `+`; the p-th such token owns the ARG_p column. A cell is `_`
// when no arc is present, otherwise it holds the arc label of an arc from
// that predicate to the row's token. A `+` TOP denotes an arc from the
// virtual root carrying the configured root label. FRAME is not modelled
// and is written back as `_`.

inline Corpus read_sdp(const std::string& path, const std::string& root_label = "TOP") {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);

  Corpus corpus;
  std::vector<std::vector<std::string>> rows;
  std::string pending_id;
  std::size_t line_no = 0, block_start = 0, blocks = 0;

  auto flush = [&]() {
    if (rows.empty() && pending_id.empty()) return;
    if (rows.empty())
      throw data_error(path + ":" + std::to_string(block_start) + ": comment without tokens");
    ++blocks;
    Sentence sent;
    sent.id = pending_id.empty() ? std::to_string(blocks) : pending_id;
    SemanticGraph graph;

    std::size_t n = rows.size();
    std::vector<std::size_t> predicates;  // token indices with PRED '+'
    for (std::size_t r = 0; r < n; ++r) {
      const auto& cols = rows[r];
      std::size_t ln = block_start + r;
      if (cols.size() < 7)
        throw data_error(path + ":" + std::to_string(ln) + ": expected at least 7 columns, got " +
                         std::to_string(cols.size()));
      std::size_t id = 0;
      try {
        id = std::stoul(cols[0]);
      } catch (...) {
        throw data_error(path + ":" + std::to_string(ln) + ": bad token id '" + cols[0] + "'");
      }
      if (id != r + 1)
        throw data_error(path + ":" + std::to_string(ln) + ": token ids must be sequential, got " +
                         cols[0]);
      if (cols[4] != "+" && cols[4] != "-")
        throw data_error(path + ":" + std::to_string(ln) + ": TOP must be + or -, got '" + cols[4] + "'");
      if (cols[5] != "+" && cols[5] != "-")
        throw data_error(path + ":" + std::to_string(ln) + ": PRED must be + or -, got '" + cols[5] + "'");
      if (cols[5] == "+") predicates.push_back(id);
      sent.tokens.push_back({id, cols[1], cols[2], cols[3]});
    }

    std::size_t k = predicates.size();
    for (std::size_t r = 0; r < n; ++r) {
      const auto& cols = rows[r];
      std::size_t ln = block_start + r;
      if (cols.size() != 7 + k)
        throw data_error(path + ":" + std::to_string(ln) + ": expected " + std::to_string(7 + k) +
                         " columns for " + std::to_string(k) + " predicates, got " +
                         std::to_string(cols.size()));
      if (cols[4] == "+") graph.add({0, r + 1, root_label});
      for (std::size_t p = 0; p < k; ++p) {
        const std::string& cell = cols[7 + p];
        if (cell == "_") continue;
        if (cell.empty())
          throw data_error(path + ":" + std::to_string(ln) + ": empty argument cell");
        if (predicates[p] == r + 1)
          throw data_error(path + ":" + std::to_string(ln) + ": reflexive arc on token " +
                           std::to_string(r + 1));
        graph.add({predicates[p], r + 1, cell});
      }
    }
    corpus.emplace_back(std::move(sent), std::move(graph));
    rows.clear();
    pending_id.clear();
  };

  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') {
      if (!rows.empty())
        throw data_error(path + ":" + std::to_string(line_no) + ": comment inside a block");
      pending_id = trim(line.substr(1));
      block_start = line_no + 1;
      continue;
    }
    if (rows.empty() && pending_id.empty()) block_start = line_no;
    rows.push_back(split(line, '\t'));
  }
  flush();
  return corpus;
}

inline void write_sdp(const Corpus& corpus, const std::string& path,
                      const std::string& root_label = "TOP") {
  (void)root_label;  // the root label is implied by the TOP column
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);

  auto check_cell = [&](const std::string& s) {
    if (s.find('\t') != std::string::npos || s.find('\n') != std::string::npos)
      throw data_error("write_sdp: cell contains tab or newline: '" + s + "'");
    if (s.empty()) throw data_error("write_sdp: empty cell");
  };

  bool first = true;
  for (const auto& [sent, graph] : corpus) {
    if (!first) out << "\n";
    first = false;
    out << "#" << sent.id << "\n";

    std::size_t n = sent.size();
    std::vector<std::size_t> predicates;
    for (std::size_t h = 1; h <= n; ++h) {
      bool is_pred = false;
      for (std::size_t d = 1; d <= n && !is_pred; ++d) is_pred = graph.has(h, d);
      if (is_pred) predicates.push_back(h);
    }

    for (const Token& tok : sent.tokens) {
      check_cell(tok.form);
      check_cell(tok.lemma);
      check_cell(tok.pos);
      out << tok.index << "\t" << tok.form << "\t" << tok.lemma << "\t" << tok.pos << "\t"
          << (graph.has(0, tok.index) ? "+" : "-") << "\t"
          << (std::find(predicates.begin(), predicates.end(), tok.index) != predicates.end()
                  ? "+"
                  : "-")
          << "\t_";
      for (std::size_t p : predicates) {
        const std::string* label = graph.label(p, tok.index);
        if (label) check_cell(*label);
        out << "\t" << (label ? *label : "_");
      }
      out << "\n";
    }
  }
  if (!out) throw data_error("write failed: " + path);
}

// --- vocabulary ----------------------------------------------------------------

class StringMap {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t add(const std::string& s) {
    auto it = ids_.find(s);
    if (it != ids_.end()) return it->second;
    std::size_t id = items_.size();
    items_.push_back(s);
    ids_.emplace(s, id);
    return id;
  }

  std::size_t find(const std::string& s) const {
    auto it = ids_.find(s);
    return it == ids_.end() ? npos : it->second;
  }

  const std::string& operator[](std::size_t id) const { return items_.at(id); }
  std::size_t size() const { return items_.size(); }
  const std::vector<std::string>& items() const { return items_; }

  friend bool operator==(const StringMap& a, const StringMap& b) {
    return a.items_ == b.items_;
  }

 private:
  std::vector<std::string> items_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// Forms, lemmas and POS share one unknown-word slot at id 0. Labels are a
// closed set (no unknown). `covered` records which forms/lemmas were
// present in a pre-trained embedding file; everything else starts from
// random initialisation.
struct Vocabulary {
  static constexpr std::size_t kUnk = 0;
  static constexpr const char* kUnkText = "<unk>";

  StringMap forms, lemmas, pos, labels;
  std::set<std::string> covered_forms, covered_lemmas;

  Vocabulary() {
    forms.add(kUnkText);
    lemmas.add(kUnkText);
    pos.add(kUnkText);
  }

  std::size_t form_id(const std::string& s) const { return or_unk(forms.find(s)); }
  std::size_t lemma_id(const std::string& s) const { return or_unk(lemmas.find(s)); }
  std::size_t pos_id(const std::string& s) const { return or_unk(pos.find(s)); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.forms == b.forms && a.lemmas == b.lemmas && a.pos == b.pos && a.labels == b.labels &&
           a.covered_forms == b.covered_forms && a.covered_lemmas == b.covered_lemmas;
  }

 private:
  static std::size_t or_unk(std::size_t id) { return id == StringMap::npos ? kUnk : id; }
};

using PretrainedVectors = std::unordered_map<std::string, std::vector<double>>;

// Text format, one entry per line: word v1 v2 ... vp.
inline PretrainedVectors load_pretrained(const std::string& path, std::size_t expected_dim) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  PretrainedVectors vecs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    if (v.size() != expected_dim)
      throw data_error(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(expected_dim) + " values, got " + std::to_string(v.size()));
    vecs[word] = std::move(v);
  }
  return vecs;
}

inline Vocabulary build_vocab(const Corpus& corpus, const PretrainedVectors* pretrained = nullptr) {
  Vocabulary vocab;
  for (const auto& [sent, graph] : corpus) {
    for (const Token& tok : sent.tokens) {
      vocab.forms.add(tok.form);
      vocab.lemmas.add(tok.lemma);
      vocab.pos.add(tok.pos);
    }
    for (const Arc& arc : graph.arcs()) vocab.labels.add(arc.label);
  }
  if (pretrained) {
    for (const std::string& f : vocab.forms.items())
      if (pretrained->count(f)) vocab.covered_forms.insert(f);
    for (const std::string& l : vocab.lemmas.items())
      if (pretrained->count(l)) vocab.covered_lemmas.insert(l);
  }
  return vocab;
}

inline StringMap collect_labels(const Corpus& corpus) {
  StringMap labels;
  for (const auto& [sent, graph] : corpus)
    for (const Arc& arc : graph.arcs()) labels.add(arc.label);
  return labels;
}

// --- reference syntax trees -------------------------------------------------
//
// Blocks of `index<TAB>head` lines (1-based indices, head 0 = root),
// blocks separated by a blank line, aligned by order with a parsed corpus.

struct RefTree {
  std::vector<std::size_t> head;  // head[i] for token i+1

  std::size_t size() const { return head.size(); }
};

inline std::vector<RefTree> read_ref_trees(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  std::vector<RefTree> trees;
  RefTree current;
  std::string line;
  std::size_t line_no = 0;

  auto flush = [&]() {
    if (!current.head.empty()) {
      trees.push_back(current);
      current.head.clear();
    }
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2)
      throw data_error(path + ":" + std::to_string(line_no) + ": expected 'index<TAB>head'");
    std::size_t idx = 0, head = 0;
    try {
      idx = std::stoul(cols[0]);
      head = std::stoul(cols[1]);
    } catch (...) {
      throw data_error(path + ":" + std::to_string(line_no) + ": bad number");
    }
    if (idx != current.head.size() + 1)
      throw data_error(path + ":" + std::to_string(line_no) + ": token indices must be sequential");
    current.head.push_back(head);
  }
  flush();
  for (std::size_t t = 0; t < trees.size(); ++t)
    for (std::size_t i = 0; i < trees[t].head.size(); ++i)
      if (trees[t].head[i] > trees[t].head.size())
        throw data_error(path + ": tree " + std::to_string(t + 1) + " head out of range");
  return trees;
}

// --- synthetic corpus ---------------------------------------------------------
//
// Deterministic template grammar. Sentences mix short rule-governed arcs
// (determiners, modifiers, local argument structure) with one optional
// long-distance arc whose head is chosen by a hash of the token sequence:
// the same sentence always carries the same long arc, so a model can learn
// a training set perfectly, while on unseen sentences the long arc is
// unpredictable. Multi-headed words come from coordination templates.

struct GenConfig {
  std::uint64_t seed = 1;
  std::size_t size = 50;
  double grammar_scale = 1.0;    // scales vocabulary sizes
  double multi_head_rate = 0.5;  // probability of the coordination template
  double hard_arc_rate = 0.5;    // probability of a hash-determined long arc
  std::string root_label = "TOP";
  std::string id_prefix = "syn";
};

namespace detail {

struct LexiconPools {
  std::vector<std::pair<std::string, std::string>> det, adj, prep, conj;  // (form, lemma)
  std::vector<std::pair<std::string, std::string>> noun, verb;
};

inline LexiconPools make_lexicon(double scale) {
  auto count = [&](std::size_t base, std::size_t min) {
    return std::max(min, static_cast<std::size_t>(base * scale + 0.5));
  };
  LexiconPools lex;
  for (std::size_t i = 0; i < count(3, 2); ++i)
    lex.det.push_back({"d" + std::to_string(i), "d" + std::to_string(i)});
  for (std::size_t i = 0; i < count(4, 2); ++i)
    lex.adj.push_back({"a" + std::to_string(i), "a" + std::to_string(i)});
  for (std::size_t i = 0; i < count(3, 2); ++i)
    lex.prep.push_back({"p" + std::to_string(i), "p" + std::to_string(i)});
  for (std::size_t i = 0; i < count(2, 1); ++i)
    lex.conj.push_back({"c" + std::to_string(i), "c" + std::to_string(i)});
  for (std::size_t i = 0; i < count(8, 3); ++i) {
    lex.noun.push_back({"n" + std::to_string(i), "n" + std::to_string(i)});
    lex.noun.push_back({"n" + std::to_string(i) + "s", "n" + std::to_string(i)});
  }
  for (std::size_t i = 0; i < count(6, 3); ++i) {
    lex.verb.push_back({"v" + std::to_string(i), "v" + std::to_string(i)});
    lex.verb.push_back({"v" + std::to_string(i) + "ed", "v" + std::to_string(i)});
  }
  return lex;
}

}  // namespace detail

inline Corpus gen_synthetic(const GenConfig& cfg) {
  detail::LexiconPools lex = detail::make_lexicon(cfg.grammar_scale);
  Rng rng(cfg.seed);

  struct TemplateArc {
    std::size_t head, dep;
    const char* label;
  };
  struct Template {
    const char* pos;  // one letter per token: D N V A P C
    std::vector<TemplateArc> arcs;
    std::size_t top;
  };
  static const Template kPlain{"DNVDN",
                               {{2, 1, "det"}, {5, 4, "det"}, {3, 2, "subj"}, {3, 5, "obj"}},
                               3};
  static const Template kModified{"DANVDAN",
                                  {{3, 1, "det"},
                                   {3, 2, "amod"},
                                   {7, 5, "det"},
                                   {7, 6, "amod"},
                                   {4, 3, "subj"},
                                   {4, 7, "obj"}},
                                  4};
  static const Template kPrep{"DNVDNPDN",
                              {{2, 1, "det"},
                               {5, 4, "det"},
                               {3, 2, "subj"},
                               {3, 5, "obj"},
                               {8, 7, "det"},
                               {6, 8, "pobj"},
                               {3, 6, "padv"}},
                              3};
  static const Template kCoord{"DNVCVDN",
                               {{2, 1, "det"},
                                {3, 2, "subj"},
                                {5, 2, "subj"},
                                {3, 5, "cnj"},
                                {5, 7, "obj"},
                                {7, 6, "det"}},
                               3};

  Corpus corpus;
  for (std::size_t s = 0; s < cfg.size; ++s) {
    const Template* tpl;
    if (rng.bernoulli(cfg.multi_head_rate)) {
      tpl = &kCoord;
    } else {
      static const Template* kSingle[] = {&kPlain, &kModified, &kPrep};
      tpl = kSingle[rng.index(3)];
    }

    Sentence sent;
    sent.id = cfg.id_prefix + std::to_string(s + 1);
    std::uint64_t sentence_hash = Rng::mix(cfg.seed ^ 0x51ed270b7a03ull);
    for (std::size_t i = 0; tpl->pos[i] != '\0'; ++i) {
      char c = tpl->pos[i];
      const auto* pool = &lex.noun;
      const char* tag = "N";
      switch (c) {
        case 'D': pool = &lex.det; tag = "D"; break;
        case 'A': pool = &lex.adj; tag = "A"; break;
        case 'P': pool = &lex.prep; tag = "P"; break;
        case 'C': pool = &lex.conj; tag = "C"; break;
        case 'V': pool = &lex.verb; tag = "V"; break;
        case 'N': pool = &lex.noun; tag = "N"; break;
      }
      const auto& [form, lemma] = (*pool)[rng.index(pool->size())];
      sent.tokens.push_back({i + 1, form, lemma, tag});
      for (char ch : form) sentence_hash = Rng::mix(sentence_hash ^ static_cast<std::uint64_t>(ch));
    }

    SemanticGraph graph;
    graph.add({0, tpl->top, cfg.root_label});
    for (const TemplateArc& a : tpl->arcs) graph.add({a.head, a.dep, a.label});

    bool want_hard = rng.bernoulli(cfg.hard_arc_rate);
    if (want_hard) {
      // The long arc is a pure function of the token sequence: hash-seeded
      // choice among far-away noun/verb heads.
      std::size_t n = sent.size();
      std::vector<std::size_t> candidates;
      for (std::size_t h = 1; h < n; ++h) {
        char tag = tpl->pos[h - 1];
        if ((tag == 'N' || tag == 'V') && n - h >= 3 && !graph.has(h, n))
          candidates.push_back(h);
      }
      if (!candidates.empty()) {
        Rng hash_rng(sentence_hash);
        std::size_t head = candidates[hash_rng.index(candidates.size())];
        graph.add({head, n, "lnk"});
        if (!is_acyclic(graph, n))
          throw error("gen_synthetic: internal cycle");  // unreachable by construction
      }
    }
    corpus.emplace_back(std::move(sent), std::move(graph));
  }
  return corpus;
}

}  // namespace ips
