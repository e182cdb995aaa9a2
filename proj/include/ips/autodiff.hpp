#pragma once

// Reverse-mode automatic differentiation on a dynamic tape.
//
// The design is define-by-run: every operation appends a node and computes
// its value immediately, so sampling decisions during an episode can read
// values off the tape as the graph is built. One tape is built per
// sentence (or per stored episode step) and discarded afterwards.
// Everything is double precision.
//
// Model parameters live outside the tape in `Tensor` objects; a tape
// references them through leaf nodes and accumulates gradients into
// `Tensor::grad` during backward(). A tensor used in several places (or on
// several tapes before an update) receives the sum of all contributions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ips/common.hpp"

namespace ips::ad {

struct shape_error : ips::error {
  using ips::error::error;
};

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;  // rank 1 (vector) or 2 (row-major matrix)
  std::vector<double> value;
  std::vector<double> grad;
  bool trainable = true;

  Tensor() = default;
  Tensor(std::string n, std::vector<std::size_t> s) : name(std::move(n)), shape(std::move(s)) {
    value.assign(numel(), 0.0);
    grad.assign(numel(), 0.0);
  }

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.size() > 1 ? shape[1] : 1; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

  double& at(std::size_t r, std::size_t c) { return value[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return value[r * cols() + c]; }
};

// Glorot-style uniform init for weight matrices, zero biases, small
// Gaussian for embeddings and learned feature vectors.
inline void init_glorot(Tensor& t, Rng& rng) {
  double fan_in = static_cast<double>(t.cols());
  double fan_out = static_cast<double>(t.rows());
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : t.value) v = rng.uniform(-bound, bound);
}

inline void init_gaussian(Tensor& t, Rng& rng, double stddev = 0.1) {
  for (double& v : t.value) v = rng.gaussian() * stddev;
}

enum class Op : std::uint8_t {
  kParam,
  kConst,
  kLookup,
  kMatVec,
  kMatVecCols,  // columns [col0, col0+len) of W times a short vector
  kAdd,
  kMul,
  kScale,
  kTanh,
  kSigmoid,
  kConcat,
  kSlice,
  kDropout,
  kLogSoftmax,
  kMaskedLogSoftmax,
  kSoftmaxXent,
  kPick,
  kSum,
};

class Tape {
 public:
  struct Node {
    Op op;
    std::vector<std::int32_t> in;
    Tensor* param = nullptr;     // kParam, kLookup
    std::size_t index = 0;       // kLookup row, kPick / kSoftmaxXent target, kSlice / kMatVecCols offset
    std::size_t extent = 0;      // kSlice length, kMatVecCols width
    double factor = 1.0;         // kScale
    std::vector<double> aux;     // kDropout keep-mask scaling, kConst storage handled via val
    std::vector<char> mask;      // kMaskedLogSoftmax legality
    std::vector<double> val;     // owned value (empty for kParam: reads tensor)
    std::vector<double> grad;
  };

  // --- graph construction -------------------------------------------------

  int param(Tensor& t) {
    auto it = param_ids_.find(&t);
    if (it != param_ids_.end()) return it->second;
    Node n;
    n.op = Op::kParam;
    n.param = &t;
    int id = push(std::move(n));
    param_ids_.emplace(&t, id);
    return id;
  }

  int constant(std::vector<double> v) {
    Node n;
    n.op = Op::kConst;
    n.val = std::move(v);
    return push(std::move(n));
  }

  int zeros(std::size_t sz) { return constant(std::vector<double>(sz, 0.0)); }

  int lookup(Tensor& table, std::size_t row) {
    if (table.shape.size() != 2)
      throw shape_error("lookup: table " + table.name + " must be rank 2");
    if (row >= table.rows())
      throw shape_error("lookup: row " + std::to_string(row) + " out of range " +
                        std::to_string(table.rows()) + " in " + table.name);
    Node n;
    n.op = Op::kLookup;
    n.param = &table;
    n.index = row;
    n.val.assign(table.value.begin() + row * table.cols(),
                 table.value.begin() + (row + 1) * table.cols());
    return push(std::move(n));
  }

  int matvec(Tensor& w, int x) { return matvec(param(w), x); }

  int matvec(int w, int x) {
    const Tensor* wt = node(w).param;
    if (node(w).op != Op::kParam || wt == nullptr || wt->shape.size() != 2)
      throw shape_error("matvec: weight must be a rank-2 parameter");
    if (wt->cols() != size(x))
      throw shape_error("matvec: " + wt->name + " is " + shape_str(wt->rows(), wt->cols()) +
                        " but input has size " + std::to_string(size(x)));
    Node n;
    n.op = Op::kMatVec;
    n.in = {w, x};
    n.val.assign(wt->rows(), 0.0);
    auto xv = value_span(x);
    const double* wd = wt->value.data();
    std::size_t c = wt->cols();
    for (std::size_t r = 0; r < wt->rows(); ++r) {
      double acc = 0.0;
      const double* row = wd + r * c;
      for (std::size_t k = 0; k < c; ++k) acc += row[k] * xv[k];
      n.val[r] = acc;
    }
    return push(std::move(n));
  }

  // W[:, col0 : col0+len] * x  — lets callers cache per-block products of a
  // wide first layer whose input is a concatenation of slowly and quickly
  // changing pieces.
  int matvec_cols(Tensor& w, int x, std::size_t col0) {
    int wid = param(w);
    std::size_t len = size(x);
    if (w.shape.size() != 2 || col0 + len > w.cols())
      throw shape_error("matvec_cols: block [" + std::to_string(col0) + ", " +
                        std::to_string(col0 + len) + ") out of " + w.name + " " +
                        shape_str(w.rows(), w.cols()));
    Node n;
    n.op = Op::kMatVecCols;
    n.in = {wid, x};
    n.index = col0;
    n.extent = len;
    n.val.assign(w.rows(), 0.0);
    auto xv = value_span(x);
    std::size_t c = w.cols();
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double acc = 0.0;
      const double* row = w.value.data() + r * c + col0;
      for (std::size_t k = 0; k < len; ++k) acc += row[k] * xv[k];
      n.val[r] = acc;
    }
    return push(std::move(n));
  }

  int add(std::vector<int> xs) {
    if (xs.empty()) throw shape_error("add: no inputs");
    std::size_t sz = size(xs[0]);
    for (int x : xs)
      if (size(x) != sz)
        throw shape_error("add: size mismatch " + std::to_string(size(x)) + " vs " +
                          std::to_string(sz));
    Node n;
    n.op = Op::kAdd;
    n.val.assign(sz, 0.0);
    for (int x : xs) {
      auto xv = value_span(x);
      for (std::size_t k = 0; k < sz; ++k) n.val[k] += xv[k];
    }
    n.in.assign(xs.begin(), xs.end());
    return push(std::move(n));
  }

  int add(int a, int b) { return add(std::vector<int>{a, b}); }
  int add(int a, int b, int c) { return add(std::vector<int>{a, b, c}); }

  int mul(int a, int b) {
    if (size(a) != size(b))
      throw shape_error("mul: size mismatch " + std::to_string(size(a)) + " vs " +
                        std::to_string(size(b)));
    Node n;
    n.op = Op::kMul;
    n.in = {a, b};
    n.val.assign(size(a), 0.0);
    auto av = value_span(a), bv = value_span(b);
    for (std::size_t k = 0; k < n.val.size(); ++k) n.val[k] = av[k] * bv[k];
    return push(std::move(n));
  }

  int scale(int x, double f) {
    Node n;
    n.op = Op::kScale;
    n.in = {x};
    n.factor = f;
    auto xv = value_span(x);
    n.val.assign(xv.begin(), xv.end());
    for (double& v : n.val) v *= f;
    return push(std::move(n));
  }

  int tanh_(int x) {
    Node n;
    n.op = Op::kTanh;
    n.in = {x};
    auto xv = value_span(x);
    n.val.resize(xv.size());
    for (std::size_t k = 0; k < xv.size(); ++k) n.val[k] = std::tanh(xv[k]);
    return push(std::move(n));
  }

  int sigmoid(int x) {
    Node n;
    n.op = Op::kSigmoid;
    n.in = {x};
    auto xv = value_span(x);
    n.val.resize(xv.size());
    for (std::size_t k = 0; k < xv.size(); ++k) n.val[k] = 1.0 / (1.0 + std::exp(-xv[k]));
    return push(std::move(n));
  }

  int concat(std::vector<int> xs) {
    if (xs.empty()) throw shape_error("concat: no inputs");
    Node n;
    n.op = Op::kConcat;
    for (int x : xs) {
      auto xv = value_span(x);
      n.val.insert(n.val.end(), xv.begin(), xv.end());
    }
    n.in.assign(xs.begin(), xs.end());
    return push(std::move(n));
  }

  int slice(int x, std::size_t offset, std::size_t len) {
    if (offset + len > size(x))
      throw shape_error("slice: [" + std::to_string(offset) + ", " +
                        std::to_string(offset + len) + ") out of size " +
                        std::to_string(size(x)));
    Node n;
    n.op = Op::kSlice;
    n.in = {x};
    n.index = offset;
    n.extent = len;
    auto xv = value_span(x);
    n.val.assign(xv.begin() + offset, xv.begin() + offset + len);
    return push(std::move(n));
  }

  // Inverted dropout: kept entries are scaled by 1/(1-rate) at train time
  // so evaluation is the identity. rate 0 (or eval mode) returns the input
  // node unchanged.
  int dropout(int x, double rate, Rng& rng, bool train) {
    if (!train || rate <= 0.0) return x;
    if (rate >= 1.0) throw shape_error("dropout: rate must be < 1");
    Node n;
    n.op = Op::kDropout;
    n.in = {x};
    auto xv = value_span(x);
    n.aux.resize(xv.size());
    n.val.resize(xv.size());
    double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t k = 0; k < xv.size(); ++k) {
      n.aux[k] = rng.uniform() < rate ? 0.0 : keep_scale;
      n.val[k] = xv[k] * n.aux[k];
    }
    return push(std::move(n));
  }

  int log_softmax(int x) {
    Node n;
    n.op = Op::kLogSoftmax;
    n.in = {x};
    auto xv = value_span(x);
    double lse = log_sum_exp(xv, nullptr);
    n.val.resize(xv.size());
    for (std::size_t k = 0; k < xv.size(); ++k) n.val[k] = xv[k] - lse;
    return push(std::move(n));
  }

  // Log-probabilities over the entries whose mask is nonzero; masked
  // entries are excluded from the normalisation and get a large negative
  // output (probability exactly zero after exp in double precision).
  // Changing a masked score never changes any legal probability.
  int masked_log_softmax(int x, std::vector<char> mask) {
    if (mask.size() != size(x))
      throw shape_error("masked_log_softmax: mask size " + std::to_string(mask.size()) +
                        " vs input " + std::to_string(size(x)));
    if (std::find(mask.begin(), mask.end(), char(1)) == mask.end())
      throw shape_error("masked_log_softmax: no legal entry");
    Node n;
    n.op = Op::kMaskedLogSoftmax;
    n.in = {x};
    auto xv = value_span(x);
    double lse = log_sum_exp(xv, &mask);
    n.val.resize(xv.size());
    for (std::size_t k = 0; k < xv.size(); ++k)
      n.val[k] = mask[k] ? xv[k] - lse : -1e30;
    n.mask = std::move(mask);
    return push(std::move(n));
  }

  // Scalar loss: log-sum-exp(scores) - scores[target].
  int softmax_cross_entropy(int scores, std::size_t target) {
    if (target >= size(scores))
      throw shape_error("softmax_cross_entropy: target " + std::to_string(target) +
                        " out of " + std::to_string(size(scores)));
    Node n;
    n.op = Op::kSoftmaxXent;
    n.in = {scores};
    n.index = target;
    auto xv = value_span(scores);
    n.val = {log_sum_exp(xv, nullptr) - xv[target]};
    return push(std::move(n));
  }

  int pick(int x, std::size_t index) {
    if (index >= size(x))
      throw shape_error("pick: index " + std::to_string(index) + " out of " +
                        std::to_string(size(x)));
    Node n;
    n.op = Op::kPick;
    n.in = {x};
    n.index = index;
    n.val = {value_span(x)[index]};
    return push(std::move(n));
  }

  int sum(int x) {
    Node n;
    n.op = Op::kSum;
    n.in = {x};
    double acc = 0.0;
    for (double v : value_span(x)) acc += v;
    n.val = {acc};
    return push(std::move(n));
  }

  // --- inspection ----------------------------------------------------------

  std::span<const double> value_span(int id) const {
    const Node& n = node(id);
    if (n.op == Op::kParam) return {n.param->value.data(), n.param->value.size()};
    return {n.val.data(), n.val.size()};
  }

  std::vector<double> value(int id) const {
    auto s = value_span(id);
    return {s.begin(), s.end()};
  }

  double scalar(int id) const {
    auto s = value_span(id);
    if (s.size() != 1)
      throw shape_error("scalar: node has size " + std::to_string(s.size()));
    return s[0];
  }

  std::size_t size(int id) const { return value_span(id).size(); }
  std::size_t node_count() const { return nodes_.size(); }

  // --- backward ------------------------------------------------------------

  void backward(int loss) {
    if (size(loss) != 1)
      throw shape_error("backward: loss must be scalar, has size " +
                        std::to_string(size(loss)));
    for (Node& n : nodes_) n.grad.clear();
    grad_of(loss)[0] = 1.0;
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.empty()) continue;  // not on a path to the loss
      backprop(n);
    }
  }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> param_ids_;

  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size() - 1);
  }

  std::span<double> grad_of(int id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad.assign(value_span(id).size(), 0.0);
    return {n.grad.data(), n.grad.size()};
  }

  static std::string shape_str(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + " x " + std::to_string(c) + ")";
  }

  static double log_sum_exp(std::span<const double> x, const std::vector<char>* mask) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < x.size(); ++k)
      if ((!mask || (*mask)[k]) && x[k] > mx) mx = x[k];
    double acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k)
      if (!mask || (*mask)[k]) acc += std::exp(x[k] - mx);
    return mx + std::log(acc);
  }

  void backprop(Node& n) {
    const std::vector<double>& g = n.grad;
    switch (n.op) {
      case Op::kParam:
        if (n.param->trainable)
          for (std::size_t k = 0; k < g.size(); ++k) n.param->grad[k] += g[k];
        break;
      case Op::kConst:
        break;
      case Op::kLookup:
        if (n.param->trainable) {
          double* row = n.param->grad.data() + n.index * n.param->cols();
          for (std::size_t k = 0; k < g.size(); ++k) row[k] += g[k];
        }
        break;
      case Op::kMatVec: {
        Tensor* w = node(n.in[0]).param;
        auto xv = value_span(n.in[1]);
        auto xg = grad_of(n.in[1]);
        std::size_t c = w->cols();
        for (std::size_t r = 0; r < w->rows(); ++r) {
          double gr = g[r];
          if (gr == 0.0) continue;
          const double* wrow = w->value.data() + r * c;
          if (w->trainable) {
            double* gw = w->grad.data() + r * c;
            for (std::size_t k = 0; k < c; ++k) {
              gw[k] += gr * xv[k];
              xg[k] += gr * wrow[k];
            }
          } else {
            for (std::size_t k = 0; k < c; ++k) xg[k] += gr * wrow[k];
          }
        }
        break;
      }
      case Op::kMatVecCols: {
        Tensor* w = node(n.in[0]).param;
        auto xv = value_span(n.in[1]);
        auto xg = grad_of(n.in[1]);
        std::size_t c = w->cols();
        for (std::size_t r = 0; r < w->rows(); ++r) {
          double gr = g[r];
          if (gr == 0.0) continue;
          const double* wrow = w->value.data() + r * c + n.index;
          if (w->trainable) {
            double* gw = w->grad.data() + r * c + n.index;
            for (std::size_t k = 0; k < n.extent; ++k) {
              gw[k] += gr * xv[k];
              xg[k] += gr * wrow[k];
            }
          } else {
            for (std::size_t k = 0; k < n.extent; ++k) xg[k] += gr * wrow[k];
          }
        }
        break;
      }
      case Op::kAdd:
        for (int in : n.in) {
          auto ig = grad_of(in);
          for (std::size_t k = 0; k < g.size(); ++k) ig[k] += g[k];
        }
        break;
      case Op::kMul: {
        auto av = value_span(n.in[0]), bv = value_span(n.in[1]);
        auto ag = grad_of(n.in[0]), bg = grad_of(n.in[1]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ag[k] += g[k] * bv[k];
          bg[k] += g[k] * av[k];
        }
        break;
      }
      case Op::kScale: {
        auto ig = grad_of(n.in[0]);
        for (std::size_t k = 0; k < g.size(); ++k) ig[k] += g[k] * n.factor;
        break;
      }
      case Op::kTanh: {
        auto ig = grad_of(n.in[0]);
        for (std::size_t k = 0; k < g.size(); ++k)
          ig[k] += g[k] * (1.0 - n.val[k] * n.val[k]);
        break;
      }
      case Op::kSigmoid: {
        auto ig = grad_of(n.in[0]);
        for (std::size_t k = 0; k < g.size(); ++k)
          ig[k] += g[k] * n.val[k] * (1.0 - n.val[k]);
        break;
      }
      case Op::kConcat: {
        std::size_t off = 0;
        for (int in : n.in) {
          auto ig = grad_of(in);
          for (std::size_t k = 0; k < ig.size(); ++k) ig[k] += g[off + k];
          off += ig.size();
        }
        break;
      }
      case Op::kSlice: {
        auto ig = grad_of(n.in[0]);
        for (std::size_t k = 0; k < g.size(); ++k) ig[n.index + k] += g[k];
        break;
      }
      case Op::kDropout: {
        auto ig = grad_of(n.in[0]);
        for (std::size_t k = 0; k < g.size(); ++k) ig[k] += g[k] * n.aux[k];
        break;
      }
      case Op::kLogSoftmax: {
        auto ig = grad_of(n.in[0]);
        double gsum = 0.0;
        for (double v : g) gsum += v;
        for (std::size_t k = 0; k < g.size(); ++k)
          ig[k] += g[k] - std::exp(n.val[k]) * gsum;
        break;
      }
      case Op::kMaskedLogSoftmax: {
        auto ig = grad_of(n.in[0]);
        double gsum = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k)
          if (n.mask[k]) gsum += g[k];
        for (std::size_t k = 0; k < g.size(); ++k)
          if (n.mask[k]) ig[k] += g[k] - std::exp(n.val[k]) * gsum;
        break;
      }
      case Op::kSoftmaxXent: {
        auto xv = value_span(n.in[0]);
        auto ig = grad_of(n.in[0]);
        double lse = log_sum_exp(xv, nullptr);
        for (std::size_t k = 0; k < xv.size(); ++k) {
          double p = std::exp(xv[k] - lse);
          ig[k] += g[0] * (p - (k == n.index ? 1.0 : 0.0));
        }
        break;
      }
      case Op::kPick:
        grad_of(n.in[0])[n.index] += g[0];
        break;
      case Op::kSum: {
        auto ig = grad_of(n.in[0]);
        for (std::size_t k = 0; k < ig.size(); ++k) ig[k] += g[0];
        break;
      }
    }
  }
};

// Plain (non-tape) masked softmax used by decoding and sampling.
inline std::vector<double> masked_softmax(std::span<const double> scores,
                                          std::span<const char> mask) {
  if (scores.size() != mask.size()) throw shape_error("masked_softmax: size mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (mask[k] && scores[k] > mx) mx = scores[k];
  if (mx == -std::numeric_limits<double>::infinity())
    throw shape_error("masked_softmax: no legal entry");
  std::vector<double> p(scores.size(), 0.0);
  double z = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (!mask[k]) continue;
    p[k] = std::exp(scores[k] - mx);
    z += p[k];
  }
  for (double& v : p) v /= z;
  return p;
}

// --- LSTM cell --------------------------------------------------------------

// One cell's parameters with the four gates packed row-wise in the order
// input, forget, output, candidate.
struct LstmParams {
  Tensor wx;  // (4H, in)
  Tensor wh;  // (4H, H)
  Tensor b;   // (4H)

  LstmParams() = default;
  LstmParams(const std::string& prefix, std::size_t input, std::size_t hidden)
      : wx(prefix + "/wx", {4 * hidden, input}),
        wh(prefix + "/wh", {4 * hidden, hidden}),
        b(prefix + "/b", {4 * hidden}) {}

  std::size_t hidden() const { return b.shape.at(0) / 4; }

  void init(Rng& rng) {
    init_glorot(wx, rng);
    init_glorot(wh, rng);
    // biases stay zero
  }
};

struct LstmState {
  int h = -1;
  int c = -1;
};

// Composed from primitive tape ops; gradients therefore need no dedicated
// backward rule.
inline LstmState lstm_cell(Tape& t, LstmParams& p, int x, LstmState prev) {
  std::size_t hdim = p.hidden();
  int z = t.add(t.matvec(p.wx, x), t.matvec(p.wh, prev.h), t.param(p.b));
  int i = t.sigmoid(t.slice(z, 0, hdim));
  int f = t.sigmoid(t.slice(z, hdim, hdim));
  int o = t.sigmoid(t.slice(z, 2 * hdim, hdim));
  int g = t.tanh_(t.slice(z, 3 * hdim, hdim));
  LstmState out;
  out.c = t.add(t.mul(f, prev.c), t.mul(i, g));
  out.h = t.mul(o, t.tanh_(out.c));
  return out;
}

// --- gradient checking -------------------------------------------------------

struct GradCheckEntry {
  std::string tensor;
  std::size_t coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  std::size_t coords_checked = 0;
};

// Central finite differences against a freshly rebuilt forward pass. The
// builder must be deterministic (seed any randomness internally) and return
// the loss node of the graph it built. `max_coords_per_tensor` caps the
// number of coordinates probed per tensor (0 = all); coordinates are chosen
// with `rng` when a cap applies, so large models can be spot-checked.
inline GradCheckReport grad_check(const std::function<int(Tape&)>& build,
                                  std::span<Tensor* const> tensors, double step = 1e-4,
                                  std::size_t max_coords_per_tensor = 0,
                                  Rng* rng = nullptr) {
  for (Tensor* t : tensors) t->zero_grad();
  Tape tape;
  int loss = build(tape);
  tape.backward(loss);

  auto eval = [&]() {
    Tape fresh;
    int l = build(fresh);
    return fresh.scalar(l);
  };

  GradCheckReport report;
  for (Tensor* t : tensors) {
    std::vector<std::size_t> coords;
    std::size_t n = t->numel();
    if (max_coords_per_tensor == 0 || n <= max_coords_per_tensor) {
      coords.resize(n);
      for (std::size_t k = 0; k < n; ++k) coords[k] = k;
    } else {
      if (rng == nullptr) throw ips::error("grad_check: sampling requires an rng");
      for (std::size_t k = 0; k < max_coords_per_tensor; ++k)
        coords.push_back(rng->index(n));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (std::size_t k : coords) {
      double saved = t->value[k];
      t->value[k] = saved + step;
      double up = eval();
      t->value[k] = saved - step;
      double down = eval();
      t->value[k] = saved;
      double numeric = (up - down) / (2.0 * step);
      double analytic = t->grad[k];
      double denom = std::max({std::abs(numeric), std::abs(analytic), 1.0});
      double rel = std::abs(numeric - analytic) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = {t->name, k, analytic, numeric, rel};
      }
    }
  }
  return report;
}

}  // namespace ips::ad
