#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ips/autodiff.hpp"
#include "ips/gradcheck.hpp"

using namespace ips;
using Catch::Approx;

namespace {

ad::Tensor make_tensor(const std::string& name, std::vector<std::size_t> shape,
                       std::vector<double> values) {
  ad::Tensor t(name, std::move(shape));
  REQUIRE(t.numel() == values.size());
  t.value = std::move(values);
  return t;
}

}  // namespace

TEST_CASE("matvec forward and backward match hand computation") {
  ad::Tensor w = make_tensor("w", {2, 2}, {1, 2, 3, 4});
  ad::Tensor x = make_tensor("x", {2}, {5, 6});
  ad::Tape t;
  int y = t.matvec(w, t.param(x));
  CHECK(t.value(y) == std::vector<double>{17, 39});
  int loss = t.sum(y);
  t.backward(loss);
  CHECK(t.scalar(loss) == Approx(56.0));
  CHECK(w.grad == std::vector<double>{5, 6, 5, 6});
  CHECK(x.grad == std::vector<double>{4, 6});
}

TEST_CASE("matvec rejects mismatched shapes with both shapes named") {
  ad::Tensor w = make_tensor("w", {2, 3}, {1, 2, 3, 4, 5, 6});
  ad::Tensor x = make_tensor("x", {2}, {1, 1});
  ad::Tape t;
  REQUIRE_THROWS_WITH(t.matvec(w, t.param(x)),
                      Catch::Matchers::ContainsSubstring("2 x 3") &&
                          Catch::Matchers::ContainsSubstring("size 2"));
}

TEST_CASE("matvec_cols multiplies a column block only") {
  // W(2x4); columns 1..2 times x = W[:,1:3] @ x
  ad::Tensor w = make_tensor("w", {2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  ad::Tensor x = make_tensor("x", {2}, {10, 20});
  ad::Tape t;
  int y = t.matvec_cols(w, t.param(x), 1);
  CHECK(t.value(y) == std::vector<double>{2 * 10 + 3 * 20, 6 * 10 + 7 * 20});
  t.backward(t.sum(y));
  CHECK(w.grad == std::vector<double>{0, 10, 20, 0, 0, 10, 20, 0});
  CHECK(x.grad == std::vector<double>{2 + 6, 3 + 7});
}

TEST_CASE("tanh and sigmoid values and gradients") {
  ad::Tensor x = make_tensor("x", {2}, {0.5, -0.3});
  {
    ad::Tape t;
    int y = t.tanh_(t.param(x));
    std::vector<double> v = t.value(y);
    CHECK(v[0] == Approx(std::tanh(0.5)));
    CHECK(v[1] == Approx(std::tanh(-0.3)));
    x.zero_grad();
    t.backward(t.sum(y));
    CHECK(x.grad[0] == Approx(1.0 - std::tanh(0.5) * std::tanh(0.5)));
    CHECK(x.grad[1] == Approx(1.0 - std::tanh(0.3) * std::tanh(0.3)));
  }
  {
    ad::Tensor z = make_tensor("z", {1}, {0.0});
    ad::Tape t;
    int y = t.sigmoid(t.param(z));
    CHECK(t.value(y)[0] == Approx(0.5));
    t.backward(t.sum(y));
    CHECK(z.grad[0] == Approx(0.25));
  }
}

TEST_CASE("log_softmax of a uniform row is -log(n)") {
  ad::Tensor x = make_tensor("x", {2}, {0.0, 0.0});
  ad::Tape t;
  int y = t.log_softmax(t.param(x));
  std::vector<double> v = t.value(y);
  CHECK(v[0] == Approx(-std::log(2.0)));
  CHECK(v[1] == Approx(-std::log(2.0)));
  t.backward(t.pick(y, 0));
  CHECK(x.grad[0] == Approx(0.5));
  CHECK(x.grad[1] == Approx(-0.5));
}

TEST_CASE("masked log softmax ignores masked columns") {
  ad::Tensor x = make_tensor("x", {3}, {1.0, 5.0, 3.0});
  ad::Tape t;
  int y = t.masked_log_softmax(t.param(x), {1, 0, 1});
  std::vector<double> v = t.value(y);
  double lse = 3.0 + std::log(1.0 + std::exp(-2.0));
  CHECK(v[0] == Approx(1.0 - lse));
  CHECK(v[2] == Approx(3.0 - lse));
  CHECK(v[1] < -1e29);  // masked out
  t.backward(t.pick(y, 2));
  double p0 = std::exp(1.0 - lse), p2 = std::exp(3.0 - lse);
  CHECK(x.grad[0] == Approx(-p0));
  CHECK(x.grad[1] == Approx(0.0));
  CHECK(x.grad[2] == Approx(1.0 - p2));
}

TEST_CASE("masked log softmax requires at least one legal column") {
  ad::Tensor x = make_tensor("x", {2}, {1.0, 2.0});
  ad::Tape t;
  CHECK_THROWS_AS(t.masked_log_softmax(t.param(x), {0, 0}), ad::shape_error);
}

TEST_CASE("softmax cross entropy equals logsumexp minus target score") {
  ad::Tensor x = make_tensor("x", {3}, {1.0, 2.0, 3.0});
  ad::Tape t;
  int ce = t.softmax_cross_entropy(t.param(x), 0);
  double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(t.scalar(ce) == Approx(lse - 1.0));
  t.backward(ce);
  CHECK(x.grad[0] == Approx(std::exp(1.0 - lse) - 1.0));
  CHECK(x.grad[1] == Approx(std::exp(2.0 - lse)));
  CHECK(x.grad[2] == Approx(std::exp(3.0 - lse)));
}

TEST_CASE("lookup reads a row and routes gradient to it alone") {
  ad::Tensor table = make_tensor("table", {3, 2}, {1, 2, 3, 4, 5, 6});
  ad::Tape t;
  int r = t.lookup(table, 1);
  CHECK(t.value(r) == std::vector<double>{3, 4});
  t.backward(t.sum(r));
  CHECK(table.grad == std::vector<double>{0, 0, 1, 1, 0, 0});
}

TEST_CASE("concat and slice are inverse and route gradients") {
  ad::Tensor a = make_tensor("a", {2}, {1, 2});
  ad::Tensor b = make_tensor("b", {3}, {3, 4, 5});
  ad::Tape t;
  int cat = t.concat({t.param(a), t.param(b)});
  CHECK(t.value(cat) == std::vector<double>{1, 2, 3, 4, 5});
  int s = t.slice(cat, 1, 3);
  CHECK(t.value(s) == std::vector<double>{2, 3, 4});
  t.backward(t.sum(s));
  CHECK(a.grad == std::vector<double>{0, 1});
  CHECK(b.grad == std::vector<double>{1, 1, 0});
}

TEST_CASE("mul, scale, and n-ary add") {
  ad::Tensor a = make_tensor("a", {2}, {2, 3});
  ad::Tensor b = make_tensor("b", {2}, {5, 7});
  ad::Tape t;
  int m = t.mul(t.param(a), t.param(b));
  CHECK(t.value(m) == std::vector<double>{10, 21});
  int sc = t.scale(m, -2.0);
  CHECK(t.value(sc) == std::vector<double>{-20, -42});
  int total = t.add({sc, t.param(a), t.param(b)});
  t.backward(t.sum(total));
  // d/da = -2b + 1, d/db = -2a + 1
  CHECK(a.grad == std::vector<double>{-9, -13});
  CHECK(b.grad == std::vector<double>{-3, -5});
}

TEST_CASE("dropout is identity in eval mode and for rate zero") {
  ad::Tensor x = make_tensor("x", {4}, {1, 2, 3, 4});
  Rng rng(3);
  ad::Tape t;
  int a = t.dropout(t.param(x), 0.5, rng, false);
  int b = t.dropout(t.param(x), 0.0, rng, true);
  CHECK(t.value(a) == x.value);
  CHECK(t.value(b) == x.value);
}

TEST_CASE("train-mode dropout zeroes or rescales each entry") {
  ad::Tensor x = make_tensor("x", {64}, std::vector<double>(64, 1.0));
  Rng rng(5);
  ad::Tape t;
  int y = t.dropout(t.param(x), 0.25, rng, true);
  std::vector<double> v = t.value(y);
  std::size_t kept = 0;
  for (double e : v) {
    bool zero = e == 0.0;
    bool scaled = std::abs(e - 1.0 / 0.75) < 1e-12;
    REQUIRE((zero || scaled));
    if (scaled) ++kept;
  }
  CHECK(kept > 24);  // rate 0.25: keeping far more than half is overwhelmingly likely
  CHECK(kept < 64);
  t.backward(t.sum(y));
  for (std::size_t i = 0; i < 64; ++i) CHECK(x.grad[i] == Approx(v[i]));  // grad = mask/keep
}

TEST_CASE("dropout masks replay under a reseeded generator") {
  ad::Tensor x = make_tensor("x", {16}, std::vector<double>(16, 1.0));
  auto run = [&] {
    Rng rng(11);
    ad::Tape t;
    return t.value(t.dropout(t.param(x), 0.5, rng, true));
  };
  CHECK(run() == run());
}

TEST_CASE("lstm cell with zero weights halves the previous cell state") {
  ad::LstmParams p("cell", 2, 1);  // all zeros
  ad::Tape t;
  ad::LstmState prev{t.zeros(1), t.constant({2.0})};
  int x = t.constant({0.7, -0.4});
  ad::LstmState out = ad::lstm_cell(t, p, x, prev);
  // gates i=f=o=0.5, candidate g=0: c = 0.5*2, h = 0.5*tanh(1)
  CHECK(t.value(out.c)[0] == Approx(1.0));
  CHECK(t.value(out.h)[0] == Approx(0.5 * std::tanh(1.0)));
}

TEST_CASE("backward requires a scalar loss") {
  ad::Tensor x = make_tensor("x", {2}, {1, 2});
  ad::Tape t;
  int y = t.param(x);
  CHECK_THROWS_AS(t.backward(y), ad::shape_error);
}

TEST_CASE("gradients accumulate across backward calls until cleared") {
  ad::Tensor x = make_tensor("x", {1}, {3.0});
  ad::Tape t;
  int loss = t.scale(t.param(x), 2.0);
  int s = t.sum(loss);
  t.backward(s);
  CHECK(x.grad[0] == Approx(2.0));
  t.backward(s);
  CHECK(x.grad[0] == Approx(4.0));
  x.zero_grad();
  CHECK(x.grad[0] == 0.0);
}

TEST_CASE("non-trainable tensors collect no gradient") {
  ad::Tensor x = make_tensor("x", {2}, {1, 2});
  x.trainable = false;
  ad::Tape t;
  t.backward(t.sum(t.param(x)));
  CHECK(x.grad == std::vector<double>{0, 0});
}

TEST_CASE("finite differences validate every primitive jointly") {
  std::vector<GradCheckCase> cases = grad_check_suite(0.03, 2, 3);
  for (const GradCheckCase& c : cases) {
    INFO(c.name << " worst tensor: " << c.report.worst.tensor << "["
                << c.report.worst.coord << "] analytic=" << c.report.worst.analytic
                << " numeric=" << c.report.worst.numeric);
    CHECK(c.report.max_rel_error < 1e-6);
    CHECK(c.report.coords_checked > 0);
  }
}

TEST_CASE("glorot bounds and gaussian determinism") {
  ad::Tensor w("w", {20, 30});
  Rng r(3);
  ad::init_glorot(w, r);
  double bound = std::sqrt(6.0 / (20 + 30));
  for (double v : w.value) {
    REQUIRE(v >= -bound);
    REQUIRE(v < bound);
  }
  ad::Tensor g1("g", {50}), g2("g", {50});
  Rng r1(4), r2(4);
  ad::init_gaussian(g1, r1, 0.1);
  ad::init_gaussian(g2, r2, 0.1);
  CHECK(g1.value == g2.value);
}
