#include <doctest.h>

#include <cmath>

#include "dialprobe/errors.hpp"
#include "dialprobe/gradkernel.hpp"

using namespace dialprobe;
using namespace dialprobe::gk;

namespace {

Buffer<double> random_buffer(int rows, int cols, Rng& rng, double scale = 1.0) {
  Buffer<double> buf(rows, cols);
  for (auto& v : buf.v) v = rng.normal() * scale;
  return buf;
}

// Convenience wrapper: checks d(loss)/d(param) for a scalar-graph builder.
GradCheckReport check_graph(
    const std::function<TapeD::H(TapeD&, std::vector<TapeD::H>&)>& build,
    std::vector<Buffer<double>*> params, double tol = 1e-4, std::uint64_t seed = 99) {
  auto loss = [&]() {
    TapeD tape(true);
    std::vector<TapeD::H> leaves;
    for (auto* p : params) leaves.push_back(tape.leaf(*p));
    return tape.scalar(build(tape, leaves));
  };
  auto grads = [&]() {
    TapeD tape(true);
    std::vector<TapeD::H> leaves;
    for (auto* p : params) leaves.push_back(tape.leaf(*p));
    tape.backward(build(tape, leaves));
  };
  std::vector<std::pair<std::string, Buffer<double>*>> named;
  for (std::size_t i = 0; i < params.size(); ++i)
    named.emplace_back("p" + std::to_string(i), params[i]);
  Rng rng(seed);
  return grad_check(loss, grads, named, 1e-4, tol, rng);
}

}  // namespace

TEST_CASE("forward op values") {
  TapeD t;
  Buffer<double> z(1, 4);
  auto sm = t.softmax_rows(t.leaf(z));
  for (int j = 0; j < 4; ++j) CHECK(t.values(sm)[j] == doctest::Approx(0.25));

  Buffer<double> x(1, 1);
  auto sig = t.sigmoid(t.leaf(x));
  CHECK(t.values(sig)[0] == doctest::Approx(0.5));
  auto th = t.tanh(t.leaf(x));
  CHECK(t.values(th)[0] == doctest::Approx(0.0));

  Buffer<double> a(2, 2);
  a.v = {1, 2, 3, 4};
  Buffer<double> b(2, 1);
  b.v = {1, 1};
  auto mm = t.matmul(t.leaf(a), t.leaf(b));
  CHECK(t.values(mm)[0] == doctest::Approx(3.0));
  CHECK(t.values(mm)[1] == doctest::Approx(7.0));
}

TEST_CASE("cross entropy values") {
  TapeD t;
  Buffer<double> uniform(1, 4);
  CHECK(t.scalar(t.cross_entropy(t.leaf(uniform), {2})) == doctest::Approx(std::log(4.0)));

  Buffer<double> dominant(1, 4);
  dominant.v = {100.0, 0.0, 0.0, 0.0};
  CHECK(t.scalar(t.cross_entropy(t.leaf(dominant), {0})) == doctest::Approx(0.0).epsilon(1e-9));

  Buffer<double> three(1, 3);
  three.v = {1.0, 2.0, 3.0};
  CHECK(t.scalar(t.cross_entropy(t.leaf(three), {0})) == doctest::Approx(2.4076).epsilon(1e-4));

  Buffer<double> bad(1, 3);
  TapeD t2;
  CHECK_THROWS_AS(t2.cross_entropy(t2.leaf(bad), {7}), IndexError);
}

TEST_CASE("simple analytic gradients") {
  TapeD t;
  Buffer<double> x(1, 1);
  auto loss = t.sigmoid(t.leaf(x));
  t.backward(loss);
  CHECK(x.g[0] == doctest::Approx(0.25));  // d sigmoid at 0

  TapeD t2;
  Buffer<double> y(3, 2);
  auto s = t2.sum_all(t2.leaf(y));
  t2.backward(s);
  for (double g : y.g) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("state and dimension errors") {
  TapeD t;
  Buffer<double> x(2, 3);
  auto h = t.leaf(x);
  CHECK_THROWS_AS(t.backward(h), StateError);  // backward without any forward op

  TapeD t2;
  Buffer<double> a(2, 3), b(2, 3);
  CHECK_THROWS_AS(t2.matmul(t2.leaf(a), t2.leaf(b)), DimensionError);
  try {
    TapeD t3;
    t3.matmul(t3.leaf(a), t3.leaf(b));
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("finite-difference checks for every op") {
  Rng rng(42);
  auto expect_pass = [](const GradCheckReport& report) {
    CAPTURE(report.worst_param);
    CAPTURE(report.worst_index);
    CHECK(report.pass);
  };

  Buffer<double> a = random_buffer(3, 4, rng);
  Buffer<double> b = random_buffer(4, 5, rng);
  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) { return t.sum_all(t.matmul(p[0], p[1])); },
      {&a, &b}, 1e-6));

  Buffer<double> bt = random_buffer(5, 4, rng);
  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) { return t.sum_all(t.matmul_nt(p[0], p[1])); },
      {&a, &bt}, 1e-6));

  Buffer<double> c = random_buffer(3, 4, rng);
  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) {
        return t.sum_all(t.mul(t.add(p[0], p[1]), t.sub(p[0], p[1])));
      },
      {&a, &c}));

  Buffer<double> row = random_buffer(1, 4, rng);
  Buffer<double> col = random_buffer(3, 1, rng);
  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) {
        return t.sum_all(t.mul_colvec(t.add_rowvec(p[0], p[1]), p[2]));
      },
      {&a, &row, &col}));

  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) {
        auto mid = t.tanh(t.tanh(t.tanh(t.tanh(t.tanh(p[0])))));
        return t.mean_all(t.scale(mid, 3.0));
      },
      {&a}));

  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) {
        return t.sum_all(t.mul(t.sigmoid(p[0]), t.relu(p[1])));
      },
      {&a, &c}));

  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) {
        auto sm = t.softmax_rows(p[0]);
        return t.sum_all(t.mul(sm, p[1]));
      },
      {&a, &c}));

  Buffer<double> table = random_buffer(7, 3, rng);
  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) {
        return t.sum_all(t.tanh(t.embed(p[0], {1, 4, 1, 6})));
      },
      {&table}));

  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) {
        auto cat = t.concat_cols({p[0], p[1]});
        auto left = t.slice_cols(cat, 0, 3);
        auto rows = t.slice_rows(cat, 1, 3);
        return t.add(t.sum_all(t.mul(left, left)), t.sum_all(t.tanh(rows)));
      },
      {&a, &c}));

  Buffer<double> w1 = random_buffer(3, 4, rng);
  Buffer<double> w2 = random_buffer(3, 4, rng);
  Buffer<double> weights = random_buffer(3, 2, rng);
  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) {
        auto alpha = t.softmax_rows(p[2]);
        return t.sum_all(t.tanh(t.weighted_sum({p[0], p[1]}, alpha)));
      },
      {&w1, &w2, &weights}));

  Buffer<double> gain = random_buffer(1, 4, rng, 0.5);
  Buffer<double> bias = random_buffer(1, 4, rng, 0.5);
  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) {
        return t.sum_all(t.tanh(t.layer_norm(p[0], p[1], p[2])));
      },
      {&a, &gain, &bias}));

  Buffer<double> logits = random_buffer(4, 6, rng);
  expect_pass(check_graph(
      [](TapeD& t, std::vector<TapeD::H>& p) {
        return t.cross_entropy(p[0], {0, 3, -1, 5}, -1);
      },
      {&logits}));

  std::vector<double> targets = {1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 1, 1,
                                 0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 1};
  expect_pass(check_graph(
      [&targets](TapeD& t, std::vector<TapeD::H>& p) { return t.bce_logits(p[0], targets); },
      {&logits}));
}

TEST_CASE("lstm cell gradient vs finite differences") {
  Rng rng(7);
  int hidden = 5;
  Buffer<double> x = random_buffer(2, 3, rng);
  Buffer<double> h0 = random_buffer(2, hidden, rng);
  Buffer<double> c0 = random_buffer(2, hidden, rng);
  Buffer<double> w_ih = random_buffer(3, 4 * hidden, rng, 0.5);
  Buffer<double> w_hh = random_buffer(hidden, 4 * hidden, rng, 0.5);
  Buffer<double> bias = random_buffer(1, 4 * hidden, rng, 0.1);

  auto build = [hidden](TapeD& t, std::vector<TapeD::H>& p) {
    auto gates = t.add_rowvec(t.add(t.matmul(p[0], p[3]), t.matmul(p[1], p[4])), p[5]);
    auto gi = t.sigmoid(t.slice_cols(gates, 0, hidden));
    auto gf = t.sigmoid(t.slice_cols(gates, hidden, 2 * hidden));
    auto gg = t.tanh(t.slice_cols(gates, 2 * hidden, 3 * hidden));
    auto go = t.sigmoid(t.slice_cols(gates, 3 * hidden, 4 * hidden));
    auto cn = t.add(t.mul(gf, p[2]), t.mul(gi, gg));
    auto hn = t.mul(go, t.tanh(cn));
    return t.sum_all(t.mul(hn, hn));
  };
  auto report = check_graph(build, {&x, &h0, &c0, &w_ih, &w_hh, &bias}, 1e-4);
  CAPTURE(report.max_rel_err);
  CHECK(report.pass);
}

TEST_CASE("corrupted gradient is caught") {
  Rng rng(13);
  Buffer<double> x = random_buffer(3, 3, rng);
  auto loss = [&]() {
    TapeD t;
    return t.scalar(t.sum_all(t.mul(t.leaf(x), t.leaf(x))));
  };
  auto grads = [&]() {
    TapeD t;
    auto l = t.sum_all(t.mul(t.leaf(x), t.leaf(x)));
    t.backward(l);
    for (auto& g : x.g) g = -g;  // sign flip
  };
  Rng check_rng(1);
  auto report = grad_check(loss, grads, {{"x", &x}}, 1e-4, 1e-4, check_rng);
  CHECK_FALSE(report.pass);
  CHECK(report.worst_param == "x");
  CHECK(report.max_rel_err > 0.5);
}

TEST_CASE("softmax rows form a probability simplex") {
  Rng rng(21);
  TapeD t;
  Buffer<double> x = random_buffer(6, 9, rng, 3.0);
  auto sm = t.softmax_rows(t.leaf(x));
  for (int i = 0; i < 6; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 9; ++j) {
      double v = t.values(sm)[i * 9 + j];
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("float path is deterministic and replayable") {
  Rng rng(33);
  Buffer<float> a(4, 4), b(4, 4);
  for (auto& v : a.v) v = static_cast<float>(rng.normal());
  for (auto& v : b.v) v = static_cast<float>(rng.normal());

  auto run = [&]() {
    TapeF t;
    auto loss = t.sum_all(t.tanh(t.matmul(t.leaf(a), t.leaf(b))));
    float value = t.scalar(loss);
    t.backward(loss);
    return std::make_pair(value, a.g);
  };
  auto first = run();
  auto second = run();
  CHECK(first.first == second.first);  // bit-identical
  CHECK(first.second == second.second);
}

TEST_CASE("adam") {
  Buffer<float> w(1, 3);
  w.v = {1.0f, -2.0f, 3.0f};
  AdamState<float> state;
  adam_step(w, state, 0.01f);  // zero gradient
  CHECK(w.v == std::vector<float>{1.0f, -2.0f, 3.0f});

  // first step moves by ~ -lr * sign(g)
  Buffer<float> w2(1, 2);
  w2.g = {0.5f, -3.0f};
  AdamState<float> state2;
  adam_step(w2, state2, 0.1f);
  CHECK(w2.v[0] == doctest::Approx(-0.1).epsilon(1e-4));
  CHECK(w2.v[1] == doctest::Approx(0.1).epsilon(1e-4));

  // 100 steps on f(w) = (w-3)^2 from w=0, compared against the same
  // recursion run independently on plain doubles
  Buffer<float> w3(1, 1);
  AdamState<float> state3;
  double om = 0.0, ov = 0.0, ow = 0.0;  // oracle state
  for (int step = 1; step <= 100; ++step) {
    float g = 2.0f * (w3.v[0] - 3.0f);
    w3.g[0] = g;
    adam_step(w3, state3, 0.1f);

    double og = 2.0 * (ow - 3.0);
    om = 0.9 * om + 0.1 * og;
    ov = 0.999 * ov + 0.001 * og * og;
    double mhat = om / (1.0 - std::pow(0.9, step));
    double vhat = ov / (1.0 - std::pow(0.999, step));
    ow -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(w3.v[0] == doctest::Approx(ow).epsilon(1e-3));
  }
  CHECK(std::abs(w3.v[0] - 3.0f) < 0.1f);
}

TEST_CASE("global norm clip") {
  Buffer<float> p(1, 2);
  p.g = {3.0f, 4.0f};
  std::vector<Buffer<float>*> group = {&p};
  double norm = clip_global_norm(group, 1.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(p.g[0] == doctest::Approx(0.6));
  CHECK(p.g[1] == doctest::Approx(0.8));
}
