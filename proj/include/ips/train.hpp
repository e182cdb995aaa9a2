#pragma once

// Training: Adam, supervised cross-entropy over oracle derivations, the
// arc labeler objective, and policy-gradient fine-tuning with the episodic
// reward scheme. Supervised training updates every parameter group; the
// reinforcement stage updates only the task-specific transition-scoring
// group, leaving embeddings and the sentence encoder untouched.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ips/autodiff.hpp"
#include "ips/common.hpp"
#include "ips/corpus.hpp"
#include "ips/model.hpp"
#include "ips/transition.hpp"

namespace ips {

struct TrainConfig {
  std::uint64_t seed = 1;
  double scale = 1.0;  // model size profile used at init time
  std::size_t epochs = 20;
  double lr = 1e-3;     // supervised step size
  double rl_lr = 1e-4;  // reinforcement fine-tuning step size
  std::size_t rl_epochs = 5;
  std::size_t rl_max_transitions = 10;
  double dropout = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

// Adam with bias correction. Moments and step counts are tracked per
// tensor, so groups that update at different frequencies each get correct
// bias correction.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  explicit Adam(const TrainConfig& cfg) : Adam(cfg.beta1, cfg.beta2, cfg.adam_eps) {}

  void step(const std::vector<ad::Tensor*>& tensors, double lr) {
    for (ad::Tensor* t : tensors) {
      Slot& s = slots_[t];
      if (s.m.empty()) {
        s.m.assign(t->numel(), 0.0);
        s.v.assign(t->numel(), 0.0);
      }
      s.t += 1;
      double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
      double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
      for (std::size_t k = 0; k < t->value.size(); ++k) {
        double g = t->grad[k];
        if (!std::isfinite(g)) throw numeric_error("Adam: non-finite gradient in " + t->name);
        s.m[k] = beta1_ * s.m[k] + (1.0 - beta1_) * g;
        s.v[k] = beta2_ * s.v[k] + (1.0 - beta2_) * g * g;
        t->value[k] -= lr * (s.m[k] / bc1) / (std::sqrt(s.v[k] / bc2) + eps_);
      }
    }
  }

  std::uint64_t step_count(const ad::Tensor* t) const {
    auto it = slots_.find(const_cast<ad::Tensor*>(t));
    return it == slots_.end() ? 0 : it->second.t;
  }

 private:
  struct Slot {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };
  double beta1_, beta2_, eps_;
  std::unordered_map<ad::Tensor*, Slot> slots_;
};

// --- supervised objectives ------------------------------------------------------

// Transition cross-entropy along a sampled oracle derivation, the terminal
// all-NULL round included. Builds one tape for the whole derivation,
// backpropagates, and returns the loss value; the caller applies the
// optimizer.
inline double supervised_step(const Sentence& sent, const SemanticGraph& gold, ModelParams& params,
                              TaskParams& task, const TrainConfig& cfg, Rng& rng) {
  ad::Tape tape;
  SentenceEncoding enc = encode_sentence(tape, sent, params);
  ScorerCache cache = make_scorer_cache(tape, enc, task, params.dims);
  ScoreOptions opt{true, cfg.dropout};

  ParserState state = ParserState::initial(sent.size());
  std::vector<int> terms;
  while (true) {
    std::vector<Transition> targets = oracle_targets(state, gold, rng);
    for (const Transition& target : targets) {
      TransitionRow row = score_transition_row(tape, state, target.dependent, enc, cache, task,
                                               params.dims, opt, rng);
      terms.push_back(tape.scale(tape.pick(row.log_probs, column_of(target)), -1.0));
    }
    bool terminal = is_terminal_round(targets);
    state = apply_round(state, targets);
    if (terminal) break;
  }
  int loss = tape.add(terms);
  tape.backward(loss);
  double value = tape.scalar(loss);
  if (!std::isfinite(value)) throw numeric_error("supervised_step: non-finite loss");
  return value;
}

// Softmax cross-entropy of gold labels over gold arcs. Returns 0 without
// touching gradients when the graph is empty.
inline double label_step(const Sentence& sent, const SemanticGraph& gold, ModelParams& params,
                         TaskParams& task, const TrainConfig& cfg, Rng& rng) {
  std::vector<Arc> arcs = gold.arcs();
  if (arcs.empty()) return 0.0;
  ad::Tape tape;
  ScoreOptions opt{true, cfg.dropout};
  std::vector<int> scores = score_labels(tape, sent, arcs, params, task, opt, rng);
  std::vector<int> terms;
  for (std::size_t a = 0; a < arcs.size(); ++a) {
    std::size_t label_id = task.labels.find(arcs[a].label);
    if (label_id == StringMap::npos)
      throw data_error("label '" + arcs[a].label + "' not in task '" + task.name + "'");
    terms.push_back(tape.softmax_cross_entropy(scores[a], label_id));
  }
  int loss = tape.add(terms);
  tape.backward(loss);
  double value = tape.scalar(loss);
  if (!std::isfinite(value)) throw numeric_error("label_step: non-finite loss");
  return value;
}

// --- rewards ---------------------------------------------------------------------

// Per-word bookkeeping: whether the completion bonus for selecting NULL
// after finishing a word's gold arcs has already been granted.
struct RewardHistory {
  std::vector<char> granted;  // index 0 unused
  explicit RewardHistory(std::size_t n) : granted(n + 1, 0) {}
};

// True when the word's arcs in the state are exactly its gold arcs.
inline bool all_arcs_correct(const ParserState& state, const SemanticGraph& gold,
                             std::size_t word) {
  for (std::size_t h = 0; h <= state.n(); ++h) {
    if (h == word) continue;
    if (gold.has(h, word) != state.has_arc(word, h)) return false;
  }
  return true;
}

// Reward for one transition taken from `state`:
//   +1 for creating a gold arc;
//   +1 for the first NULL after the word's gold arcs are complete and
//      correct (tracked in `history`, which this call updates);
//   -1 for creating a non-gold arc;
//    0 otherwise (premature NULL included).
inline int compute_reward(const ParserState& state, const Transition& t, const SemanticGraph& gold,
                          RewardHistory& history) {
  if (!t.is_null()) {
    if (state.has_arc(t.dependent, t.head))
      throw error("compute_reward: transition recreates an existing arc");
    return gold.has(t.head, t.dependent) ? 1 : -1;
  }
  if (!history.granted[t.dependent] && all_arcs_correct(state, gold, t.dependent)) {
    history.granted[t.dependent] = 1;
    return 1;
  }
  return 0;
}

// --- reinforcement episodes -------------------------------------------------------

struct EpisodeAction {
  Transition transition;
  int reward = 0;
};

struct EpisodeStep {
  ParserState state;  // the state the policies were computed from
  std::vector<EpisodeAction> actions;
};

struct EpisodeRecord {
  Sentence sentence;
  FrozenEncoding frozen;  // shared-group encodings, constant during RL
  std::vector<EpisodeStep> steps;
  ParserState final_state = ParserState::initial(0);

  double total_reward() const {
    double r = 0.0;
    for (const EpisodeStep& s : steps)
      for (const EpisodeAction& a : s.actions) r += a.reward;
    return r;
  }
};

// Runs one episode following the fine-tuning loop: per round, compute all
// policies; stop when every argmax is NULL; skip finished words; words
// whose gold arcs are complete and whose argmax is NULL receive the
// completion bonus, their finish flag, and drop out of the episode;
// everyone else samples a transition and collects its reward. One tuple
// (state, actions, rewards) is stored per round that performs any action.
// With `explore` false the forward passes run without dropout (used to
// measure mean episode reward without training noise).
inline EpisodeRecord pg_episode(const Sentence& sent, const SemanticGraph& gold,
                                ModelParams& params, TaskParams& task, const TrainConfig& cfg,
                                Rng& rng, bool explore = true) {
  EpisodeRecord record;
  record.sentence = sent;
  record.frozen = freeze_encoding(sent, params);

  ParserState state = ParserState::initial(sent.size());
  RewardHistory history(sent.size());
  ScoreOptions opt{explore, cfg.dropout};

  for (std::size_t tau = 0; tau < cfg.rl_max_transitions; ++tau) {
    if (state.all_finished()) break;

    ad::Tape tape;
    SentenceEncoding enc = inject_frozen(tape, record.frozen);
    ScorerCache cache = make_scorer_cache(tape, enc, task, params.dims);

    std::vector<std::vector<double>> probs(sent.size() + 1);
    std::vector<std::size_t> argmax(sent.size() + 1);
    bool all_null = true;
    for (std::size_t w = 1; w <= sent.size(); ++w) {
      TransitionRow row =
          score_transition_row(tape, state, w, enc, cache, task, params.dims, opt, rng);
      std::vector<double> scores = tape.value(row.scores);
      probs[w] = ad::masked_softmax(scores, row.mask);
      argmax[w] = argmax_column(scores, row.mask);
      if (argmax[w] != 0) all_null = false;
    }
    if (all_null) break;

    EpisodeStep step;
    step.state = state;
    std::vector<Transition> round;
    for (std::size_t w = 1; w <= sent.size(); ++w) {
      if (state.finished(w)) continue;
      if (argmax[w] == 0 && all_arcs_correct(state, gold, w)) {
        // Completion: flag the word so it is skipped from now on; the
        // first-NULL bonus is granted at the same moment.
        state.set_finished(w);
        if (!history.granted[w]) {
          history.granted[w] = 1;
          step.actions.push_back({Transition::null_for(w), 1});
        }
        continue;
      }
      Transition t = transition_at(w, sample_column(probs[w], rng));
      int reward = compute_reward(state, t, gold, history);
      step.actions.push_back({t, reward});
      if (!t.is_null()) round.push_back(t);
    }
    state = apply_round(state, round);
    if (!step.actions.empty()) record.steps.push_back(std::move(step));
  }
  record.final_state = state;
  return record;
}

// Replays the stored tuples in shuffled order; for each tuple, rebuilds the
// forward pass from its state, forms the surrogate loss
// -sum_i r_i * log p_i(t_i), and applies one Adam update to the
// task-specific transition-scoring group. Tuples whose rewards are all
// zero have an exactly-zero gradient and are skipped without an update.
inline void pg_update(EpisodeRecord& record, ModelParams& params, TaskParams& task, Adam& adam,
                      const TrainConfig& cfg, Rng& rng) {
  std::vector<std::size_t> order(record.steps.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<ad::Tensor*> group = params.scorer_tensors(task.name);
  ScoreOptions opt{true, cfg.dropout};

  for (std::size_t idx : order) {
    EpisodeStep& step = record.steps[idx];
    bool any = false;
    for (const EpisodeAction& a : step.actions)
      if (a.reward != 0) any = true;
    if (!any) continue;

    params.zero_grads();
    ad::Tape tape;
    SentenceEncoding enc = inject_frozen(tape, record.frozen);
    ScorerCache cache = make_scorer_cache(tape, enc, task, params.dims);
    std::vector<int> terms;
    for (const EpisodeAction& a : step.actions) {
      if (a.reward == 0) continue;
      TransitionRow row = score_transition_row(tape, step.state, a.transition.dependent, enc,
                                               cache, task, params.dims, opt, rng);
      int lp = tape.pick(row.log_probs, column_of(a.transition));
      terms.push_back(tape.scale(lp, -static_cast<double>(a.reward)));
    }
    int loss = tape.add(terms);
    tape.backward(loss);
    adam.step(group, cfg.rl_lr);
  }
}

// Mean total episode reward over a corpus under the current policy,
// sampling without dropout, deterministic in `seed`.
inline double eval_mean_reward(const Corpus& corpus, ModelParams& params, TaskParams& task,
                               const TrainConfig& cfg, std::uint64_t seed) {
  if (corpus.empty()) return 0.0;
  Rng base(seed);
  double total = 0.0;
  std::size_t i = 0;
  for (const auto& [sent, gold] : corpus) {
    Rng rng = base.fork(i++);
    EpisodeRecord rec = pg_episode(sent, gold, params, task, cfg, rng, false);
    total += rec.total_reward();
  }
  return total / static_cast<double>(corpus.size());
}

// --- training loops -----------------------------------------------------------------

struct EpochStats {
  std::size_t epoch = 0;
  // per task, in corpus order
  std::vector<double> transition_loss;
  std::vector<double> label_loss;
  double mean_reward = 0.0;  // RL only
};

using EpochHook = std::function<bool(const EpochStats&)>;  // return false to stop

// Supervised multi-task training: sentences interleave across tasks
// round-robin, one transition update and one labeler update per sentence.
// The shared group accumulates updates from every task.
inline void multitask_train(const std::vector<std::pair<std::string, Corpus>>& corpora,
                            ModelParams& params, const TrainConfig& cfg,
                            const EpochHook& hook = nullptr) {
  if (corpora.empty()) throw usage_error("multitask_train: no corpora");
  Adam adam(cfg);
  Rng rng(cfg.seed);

  std::vector<TaskParams*> tasks;
  std::vector<std::vector<ad::Tensor*>> groups;
  for (const auto& [name, corpus] : corpora) {
    tasks.push_back(&params.task(name));
    std::vector<ad::Tensor*> g = params.shared_tensors();
    for (ad::Tensor* t : params.task_tensors(name)) g.push_back(t);
    groups.push_back(std::move(g));
  }

  std::size_t max_size = 0;
  for (const auto& [name, corpus] : corpora) max_size = std::max(max_size, corpus.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    stats.transition_loss.assign(corpora.size(), 0.0);
    stats.label_loss.assign(corpora.size(), 0.0);

    std::vector<std::vector<std::size_t>> order(corpora.size());
    for (std::size_t c = 0; c < corpora.size(); ++c) {
      order[c].resize(corpora[c].second.size());
      for (std::size_t i = 0; i < order[c].size(); ++i) order[c][i] = i;
      rng.shuffle(order[c]);
    }

    for (std::size_t k = 0; k < max_size; ++k) {
      for (std::size_t c = 0; c < corpora.size(); ++c) {
        if (k >= corpora[c].second.size()) continue;
        const auto& [sent, gold] = corpora[c].second[order[c][k]];

        params.zero_grads();
        stats.transition_loss[c] += supervised_step(sent, gold, params, *tasks[c], cfg, rng);
        adam.step(groups[c], cfg.lr);

        if (!gold.empty()) {
          params.zero_grads();
          stats.label_loss[c] += label_step(sent, gold, params, *tasks[c], cfg, rng);
          adam.step(groups[c], cfg.lr);
        }
      }
    }
    for (std::size_t c = 0; c < corpora.size(); ++c) {
      double n = static_cast<double>(corpora[c].second.size());
      stats.transition_loss[c] /= n;
      stats.label_loss[c] /= n;
    }
    if (hook && !hook(stats)) break;
  }
}

// Policy-gradient fine-tuning on one task. Episodes and updates run
// sentence by sentence; the labeler and all shared parameters stay fixed.
inline void finetune_rl(const Corpus& corpus, ModelParams& params, const std::string& task_name,
                        const TrainConfig& cfg, const EpochHook& hook = nullptr) {
  if (corpus.empty()) throw usage_error("finetune_rl: empty corpus");
  TaskParams& task = params.task(task_name);
  Adam adam(cfg);
  Rng rng(cfg.seed);

  for (std::size_t epoch = 1; epoch <= cfg.rl_epochs; ++epoch) {
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    double reward_sum = 0.0;
    for (std::size_t idx : order) {
      const auto& [sent, gold] = corpus[idx];
      EpisodeRecord rec = pg_episode(sent, gold, params, task, cfg, rng);
      reward_sum += rec.total_reward();
      pg_update(rec, params, task, adam, cfg, rng);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_reward = reward_sum / static_cast<double>(corpus.size());
    if (hook && !hook(stats)) break;
  }
}

}  // namespace ips
