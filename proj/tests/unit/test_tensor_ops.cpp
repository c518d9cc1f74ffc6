#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <string>

#include "paratune/gradcheck.hpp"
#include "paratune/ops.hpp"
#include "paratune/optim.hpp"
#include "test_util.hpp"

using namespace paratune;
using paratune::testing::random_tensor;

namespace {

std::vector<double> run(const std::function<Var(Tape&)>& f) {
  Tape tape;
  return f(tape).value().values;
}

// Builds a store holding the given tensors as parameters named in0, in1, ...
ParamStore inputs(std::initializer_list<Tensor> tensors) {
  ParamStore store;
  std::size_t i = 0;
  for (const auto& t : tensors) store.add("in" + std::to_string(i++), t);
  return store;
}

// Reduces any output to a scalar with fixed random weights so every output element
// contributes a distinct gradient.
Var weighted_sum(Var out) {
  std::mt19937_64 rng(99);
  Tape& tape = *out.tape;
  Var w = tape.constant(random_tensor(out.shape(), rng));
  Var prod = ops::mul(out, w);
  std::vector<Var> cells;
  const std::size_t n = prod.size();
  Var flat = prod;
  if (prod.value().rank() == 2) {
    std::vector<Var> rows;
    for (std::size_t r = 0; r < prod.value().shape[0]; ++r) rows.push_back(ops::row(prod, r));
    flat = ops::concat(rows);
  }
  for (std::size_t i = 0; i < n; ++i) {
    cells.push_back(ops::slice_cols(flat, i, 1));
  }
  return ops::sum(cells);
}

}  // namespace

TEST_CASE("elementwise primitives match their definitions") {
  CHECK(run([](Tape& t) { return ops::add(t.constant(Tensor::vector({1, 2})), t.constant(Tensor::vector({3, 4}))); }) ==
        std::vector<double>{4, 6});
  CHECK(run([](Tape& t) { return ops::abs(t.constant(Tensor::vector({-2, 0, 3}))); }) == std::vector<double>{2, 0, 3});
  const auto s = run([](Tape& t) { return ops::softmax(t.constant(Tensor::vector({0, 0, 0}))); });
  for (double v : s) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(run([](Tape& t) { return ops::sub(t.constant(Tensor::vector({5, 1})), t.constant(Tensor::vector({2, 4}))); }) ==
        std::vector<double>{3, -3});
  CHECK(run([](Tape& t) { return ops::mul(t.constant(Tensor::vector({2, -1})), t.constant(Tensor::vector({3, 4}))); }) ==
        std::vector<double>{6, -4});
}

TEST_CASE("matmul and concat follow the row-major layout") {
  Tape t;
  Var a = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b = t.constant(Tensor::matrix({{5, 6, 7}, {8, 9, 10}}));
  CHECK(ops::matmul(a, b).value().values == std::vector<double>{21, 24, 27, 47, 54, 61});
  CHECK(ops::matmul_nt(a, a).value().values == std::vector<double>{5, 11, 11, 25});
  Var c = ops::concat({a, b});
  CHECK(c.shape() == Shape{2, 5});
  CHECK(c.value().values == std::vector<double>{1, 2, 5, 6, 7, 3, 4, 8, 9, 10});
}

TEST_CASE("shape mismatches name both shapes") {
  Tape t;
  Var a = t.constant(Tensor({2, 3}));
  Var b = t.constant(Tensor({4, 2}));
  try {
    ops::matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(t.constant(Tensor({3})), t.constant(Tensor({2}))), DimensionError);
}

TEST_CASE("max_pool_span") {
  Tape t;
  Var h = t.constant(Tensor::matrix({{1, -2}, {3, 0}, {0, 5}}));
  CHECK(ops::max_pool_span(h, 0, 2).value().values == std::vector<double>{3, 5});
  CHECK(ops::max_pool_span(h, 1, 1).value().values == std::vector<double>{3, 0});
  CHECK_THROWS_AS(ops::max_pool_span(h, 2, 1), SpanError);
  CHECK_THROWS_AS(ops::max_pool_span(h, 0, 3), SpanError);

  SUBCASE("random 6x4 against a brute-force loop") {
    std::mt19937_64 rng(3);
    Tensor m = random_tensor({6, 4}, rng);
    Tape t2;
    const auto got = ops::max_pool_span(t2.constant(m), 1, 4).value().values;
    for (std::size_t d = 0; d < 4; ++d) {
      double best = -INFINITY;
      for (std::size_t r = 1; r <= 4; ++r) best = std::max(best, m.at(r, d));
      CHECK(got[d] == best);
    }
  }

  SUBCASE("gradient goes to the first argmax row") {
    Tape t2;
    Var x = t2.leaf(Tensor::matrix({{1, 7}, {4, 7}, {4, 2}}));
    Var y = ops::max_pool_span(x, 0, 2);
    Var loss = ops::sum(std::vector<Var>{ops::slice_cols(y, 0, 1), ops::scale(ops::slice_cols(y, 1, 1), 2.0)});
    t2.backward(loss);
    CHECK(t2.grad(x).values == std::vector<double>{0, 2, 1, 0, 0, 0});
  }
}

TEST_CASE("mean_pool_span") {
  Tape t;
  Var h = t.constant(Tensor::matrix({{2, 4}, {4, 8}}));
  CHECK(ops::mean_pool_span(h, 0, 1).value().values == std::vector<double>{3, 6});
  CHECK(ops::mean_pool_span(h, 0, 0).value().values == std::vector<double>{2, 4});
  CHECK_THROWS_AS(ops::mean_pool_span(h, 1, 2), SpanError);

  std::mt19937_64 rng(5);
  Tensor m = random_tensor({6, 4}, rng);
  Tape t2;
  const auto got = ops::mean_pool_span(t2.constant(m), 0, 5).value().values;
  for (std::size_t d = 0; d < 4; ++d) {
    double s = 0.0;
    for (std::size_t r = 0; r < 6; ++r) s += m.at(r, d);
    CHECK(got[d] == doctest::Approx(s / 6.0).epsilon(1e-14));
  }

  Tape t3;
  Var x = t3.leaf(Tensor::matrix({{1, 1}, {1, 1}, {1, 1}, {1, 1}}));
  t3.backward(ops::sum(std::vector<Var>{ops::slice_cols(ops::mean_pool_span(x, 1, 3), 0, 1)}));
  CHECK(t3.grad(x).values == std::vector<double>{0, 0, 1.0 / 3, 0, 1.0 / 3, 0, 1.0 / 3, 0});
}

TEST_CASE("softmax_cross_entropy") {
  Tape t;
  CHECK(ops::softmax_cross_entropy(t.constant(Tensor::vector({0, 0, 0})), 1).value().item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-15));
  const double saturated = ops::softmax_cross_entropy(t.constant(Tensor::vector({1000, -1000})), 0).value().item();
  CHECK(std::isfinite(saturated));
  CHECK(saturated == doctest::Approx(0.0));
  CHECK(std::isfinite(ops::softmax_cross_entropy(t.constant(Tensor::vector({1000, -1000})), 1).value().item()));
  CHECK_THROWS_AS(ops::softmax_cross_entropy(t.constant(Tensor::vector({0, 0})), 2), std::out_of_range);

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = random_tensor({3}, rng, -4, 4);
    const std::size_t label = static_cast<std::size_t>(trial % 3);
    const double direct =
        -std::log(std::exp(logits[label]) / (std::exp(logits[0]) + std::exp(logits[1]) + std::exp(logits[2])));
    Tape t2;
    Var x = t2.leaf(logits);
    Var loss = ops::softmax_cross_entropy(x, label);
    CHECK(loss.value().item() == doctest::Approx(direct).epsilon(1e-13));
    CHECK(loss.value().item() >= 0.0);
    t2.backward(loss);
    const double z = std::exp(logits[0]) + std::exp(logits[1]) + std::exp(logits[2]);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(t2.grad(x)[c] == doctest::Approx(std::exp(logits[c]) / z - (c == label ? 1.0 : 0.0)).epsilon(1e-13));
    }
  }
}

TEST_CASE("mse_loss") {
  Tape t;
  CHECK(ops::mse_loss(t.constant(Tensor::scalar(2.0)), 2.0).value().item() == 0.0);
  CHECK(ops::mse_loss(t.constant(Tensor::scalar(3.0)), 1.0).value().item() == 4.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 10; ++i) {
    const double p = u(rng), y = u(rng);
    Tape t2;
    Var x = t2.leaf(Tensor::scalar(p));
    Var loss = ops::mse_loss(x, y);
    CHECK(loss.value().item() == doctest::Approx((p - y) * (p - y)).epsilon(1e-14));
    t2.backward(loss);
    CHECK(t2.grad(x).item() == doctest::Approx(2 * (p - y)).epsilon(1e-14));
  }
}

TEST_CASE("softmax rows sum to one and are non-negative") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Tape t;
    const std::size_t rows = 1 + trial % 5, cols = 1 + trial % 7;
    Var y = ops::softmax(t.constant(random_tensor({rows, cols}, rng, -50, 50)));
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        CHECK(y.value().at(r, c) >= 0.0);
        s += y.value().at(r, c);
      }
      CHECK(std::fabs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("max pooling dominates mean pooling") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    Tensor h = random_tensor({n, 5}, rng);
    const std::size_t a = rng() % n;
    const std::size_t b = a + rng() % (n - a);
    Tape t;
    Var hv = t.constant(h);
    const auto mx = ops::max_pool_span(hv, a, b).value().values;
    const auto mn = ops::mean_pool_span(hv, a, b).value().values;
    for (std::size_t d = 0; d < 5; ++d) CHECK(mx[d] >= mn[d]);
  }
}

TEST_CASE("dropout is inverted and validates its probability") {
  std::mt19937_64 rng(1);
  Tape t;
  Var x = t.constant(Tensor::filled({20000}, 1.0));
  const auto& y = ops::dropout(x, 0.25, rng).value().values;
  double mean = 0.0;
  for (double v : y) {
    CHECK((v == 0.0 || std::fabs(v - 1.0 / 0.75) < 1e-15));
    mean += v;
  }
  mean /= static_cast<double>(y.size());
  CHECK(mean == doctest::Approx(1.0).epsilon(0.03));
  CHECK(ops::dropout(x, 0.0, rng).value().values == x.value().values);
  CHECK_THROWS_AS(ops::dropout(x, 1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(ops::dropout(x, -0.1, rng), std::invalid_argument);
}

TEST_CASE("embedding lookup and range check") {
  Tape t;
  Var table = t.leaf(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
  std::vector<int> ids{2, 0, 2};
  Var e = ops::embedding(table, ids);
  CHECK(e.value().values == std::vector<double>{5, 6, 1, 2, 5, 6});
  t.backward(weighted_sum(e));
  CHECK(t.grad(table).values[2] == 0.0);
  CHECK(t.grad(table).values[3] == 0.0);
  std::vector<int> bad{3};
  CHECK_THROWS_AS(ops::embedding(table, bad), std::out_of_range);
}

TEST_CASE("adam_step") {
  SUBCASE("first step moves by about lr against the gradient") {
    Tensor theta = Tensor::scalar(0.5), g = Tensor::scalar(1.0);
    std::vector<Tensor*> ps{&theta};
    std::vector<const Tensor*> gs{&g};
    AdamState st;
    adam_step(ps, gs, st, AdamConfig{1e-3});
    CHECK(theta.item() == doctest::Approx(0.5 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(st.t == 1);
  }
  SUBCASE("zero gradient leaves parameters in place") {
    Tensor theta = Tensor::vector({0.5, -2.0}), g = Tensor::vector({0.0, 0.0});
    std::vector<Tensor*> ps{&theta};
    std::vector<const Tensor*> gs{&g};
    AdamState st;
    adam_step(ps, gs, st, AdamConfig{1e-2});
    CHECK(theta.values == std::vector<double>{0.5, -2.0});
  }
  SUBCASE("three steps against the hand-unrolled recurrence") {
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double grads[3] = {0.3, -1.2, 0.7};
    // Unrolled by hand from m_t = b1 m + (1-b1) g, v_t = b2 v + (1-b2) g^2.
    const double m1 = 0.1 * 0.3, v1 = 0.001 * 0.09;
    const double th1 = 1.0 - lr * (m1 / (1 - b1)) / (std::sqrt(v1 / (1 - b2)) + eps);
    const double m2 = b1 * m1 + 0.1 * -1.2, v2 = b2 * v1 + 0.001 * 1.44;
    const double th2 = th1 - lr * (m2 / (1 - b1 * b1)) / (std::sqrt(v2 / (1 - b2 * b2)) + eps);
    const double m3 = b1 * m2 + 0.1 * 0.7, v3 = b2 * v2 + 0.001 * 0.49;
    const double th3 = th2 - lr * (m3 / (1 - b1 * b1 * b1)) / (std::sqrt(v3 / (1 - b2 * b2 * b2)) + eps);

    Tensor theta = Tensor::scalar(1.0);
    AdamState st;
    const double expected[3] = {th1, th2, th3};
    for (int i = 0; i < 3; ++i) {
      Tensor g = Tensor::scalar(grads[i]);
      std::vector<Tensor*> ps{&theta};
      std::vector<const Tensor*> gs{&g};
      adam_step(ps, gs, st, AdamConfig{lr, b1, b2, eps});
      CHECK(theta.item() == doctest::Approx(expected[i]).epsilon(1e-14));
      CHECK(st.t == i + 1);
    }
  }
  SUBCASE("non-finite gradients abort with diagnostics") {
    ParamStore store;
    store.add("w", Tensor::vector({1.0, 2.0}));
    store.get("w").grad.values[1] = std::nan("");
    Adam adam(AdamConfig{});
    try {
      adam.step(store);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("[w]") != std::string::npos);
    }
    CHECK(adam.state().t == 0);
    CHECK(store.get("w").value.values == std::vector<double>{1.0, 2.0});
  }
}

TEST_CASE("grad_check on a quadratic is exact") {
  ParamStore store = inputs({Tensor::scalar(3.0)});
  auto r = grad_check(store, [](Tape& t, ParamStore& s) {
    Var x = t.param(s, 0);
    return ops::mul(x, x);
  });
  CHECK(r.checked == 1);
  CHECK(r.max_rel_error < 1e-9);
  CHECK(r.worst_analytic == doctest::Approx(6.0));
}

TEST_CASE("every primitive passes a finite-difference check") {
  std::mt19937_64 rng(41);
  const GradCheckOptions opts{1e-4, 64, 5, 1e-9};
  auto check = [&](const char* name, ParamStore store, const LossBuilder& f) {
    CAPTURE(name);
    auto r = grad_check(store, f, opts);
    CAPTURE(r.worst_param);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-4);
  };
  check("add", inputs({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::add(t.param(s, 0), t.param(s, 1))); });
  check("sub", inputs({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::sub(t.param(s, 0), t.param(s, 1))); });
  check("mul", inputs({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::mul(t.param(s, 0), t.param(s, 1))); });
  check("abs", inputs({random_tensor({3, 4}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::abs(t.param(s, 0))); });
  check("matmul", inputs({random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::matmul(t.param(s, 0), t.param(s, 1))); });
  check("matmul_vec", inputs({random_tensor({4}, rng), random_tensor({4, 5}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::matmul(t.param(s, 0), t.param(s, 1))); });
  check("matmul_nt", inputs({random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::matmul_nt(t.param(s, 0), t.param(s, 1))); });
  check("add_bias", inputs({random_tensor({3, 4}, rng), random_tensor({4}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::add_bias(t.param(s, 0), t.param(s, 1))); });
  check("concat", inputs({random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::concat({t.param(s, 0), t.param(s, 1)})); });
  check("softmax", inputs({random_tensor({3, 5}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::softmax(t.param(s, 0))); });
  check("layer_norm", inputs({random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)}),
        [](Tape& t, ParamStore& s) {
          return weighted_sum(ops::layer_norm(t.param(s, 0), t.param(s, 1), t.param(s, 2)));
        });
  check("gelu", inputs({random_tensor({3, 4}, rng, -3, 3)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::gelu(t.param(s, 0))); });
  check("embedding", inputs({random_tensor({5, 3}, rng)}), [](Tape& t, ParamStore& s) {
    std::vector<int> ids{4, 1, 4, 0};
    return weighted_sum(ops::embedding(t.param(s, 0), ids));
  });
  check("max_pool_span", inputs({random_tensor({6, 4}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::max_pool_span(t.param(s, 0), 1, 4)); });
  check("mean_pool_span", inputs({random_tensor({6, 4}, rng)}),
        [](Tape& t, ParamStore& s) { return weighted_sum(ops::mean_pool_span(t.param(s, 0), 0, 5)); });
  check("softmax_cross_entropy", inputs({random_tensor({4}, rng)}),
        [](Tape& t, ParamStore& s) { return ops::softmax_cross_entropy(t.param(s, 0), 2); });
  check("mse_loss", inputs({random_tensor({1}, rng)}),
        [](Tape& t, ParamStore& s) { return ops::mse_loss(t.param(s, 0), 0.3); });
  check("gather_rows", inputs({random_tensor({5, 3}, rng)}), [](Tape& t, ParamStore& s) {
    std::vector<std::size_t> rows{3, 3, 0};
    return weighted_sum(ops::gather_rows(t.param(s, 0), rows));
  });
}

TEST_CASE("grad_check catches a corrupted adjoint") {
  std::mt19937_64 rng(8);
  ParamStore store = inputs({random_tensor({4}, rng)});
  auto r = grad_check(store, [](Tape& t, ParamStore& s) {
    Var x = t.param(s, 0);
    // x^2 elementwise with an adjoint that forgets the factor of two.
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * x.value()[i];
    Var y = t.record(std::move(out), {x}, [x](Tape& tp, const Tensor& g) {
      Tensor& gx = tp.grad_buffer(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * tp.value(x)[i];
    });
    return weighted_sum(y);
  });
  CHECK(r.max_rel_error > 1e-1);
}

TEST_CASE("replaying a tape twice gives identical gradients") {
  std::mt19937_64 rng(4);
  ParamStore store = inputs({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
  Tape t;
  Var loss = weighted_sum(ops::softmax(ops::matmul(t.param(store, 0), t.param(store, 1))));
  t.backward(loss);
  const auto first = store[0].grad.values;
  const auto first_tape = t.grad(Var{&t, 0}).values;
  store.zero_grad();
  t.backward(loss);
  CHECK(store[0].grad.values == first);
  CHECK(t.grad(Var{&t, 0}).values == first_tape);
}
