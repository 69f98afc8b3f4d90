#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "doctest.h"
#include "probact/autodiff.hpp"
#include "test_util.hpp"

using namespace probact;
using test::rand_normal;
using test::rv;
using test::tol;

using test::check_gradients;

TEST_CASE("tape records values and sweeps gradients once") {
  Parameter a("a", Tensor::from_values({3}, rv({1, 2, 3})));
  Parameter b("b", Tensor::from_values({3}, rv({4, 5, 6})));
  Tape tape;
  Var va = tape.leaf(a);
  Var vb = tape.leaf(b);
  Var loss = t_sum_all(tape, t_mul(tape, va, vb));
  CHECK(tape.value(loss).item() == real(32));

  tape.backward(loss, Tensor::scalar(real(1)));
  CHECK(a.grad.bitwise_equal(b.value));
  CHECK(b.grad.bitwise_equal(a.value));
  CHECK(tape.grad(va).bitwise_equal(b.value));

  CHECK_THROWS_AS(tape.backward(loss, Tensor::scalar(real(1))), UsageError);
}

TEST_CASE("parameter gradients accumulate across tapes") {
  Parameter p("p", Tensor::from_values({2}, rv({1, 2})));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    Var v = tape.leaf(p);
    tape.backward(t_sum_all(tape, v), Tensor::scalar(real(1)));
  }
  CHECK(p.grad.at(0) == real(2));
  CHECK(p.grad.at(1) == real(2));
  p.zero_grad();
  CHECK(p.grad.at(0) == real(0));
}

TEST_CASE("non-recording tapes evaluate but refuse backward") {
  Tape tape(false);
  Var v = tape.leaf(Tensor::from_values({2}, rv({1, 2})));
  Var s = t_sum_all(tape, v);
  CHECK(tape.value(s).item() == real(3));
  CHECK_THROWS_AS(tape.backward(s, Tensor::scalar(real(1))), UsageError);
}

TEST_CASE("tape misuse is reported") {
  Tape tape;
  Var v = tape.leaf(Tensor::zeros({2}));
  CHECK_THROWS_AS(tape.value(Var{}), UsageError);
  CHECK_THROWS_AS(tape.value(Var{99}), UsageError);
  CHECK_THROWS_AS(tape.grad(v), UsageError);  // before any backward
  CHECK_THROWS_AS(tape.backward(v, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("gradients of every tape op pass finite differences") {
  if (!kRealIsDouble) return;  // central differences need the 64-bit build

  Parameter a("a", rand_normal({2, 3}, 200));
  Parameter b("b", rand_normal({2, 3}, 201));
  Parameter row("row", rand_normal({3}, 202));
  Parameter m1("m1", rand_normal({3, 4}, 203));
  Parameter m2("m2", rand_normal({4, 2}, 204));

  SUBCASE("add with broadcasting") {
    auto r = check_gradients({&a, &row}, [&](Tape& t) {
      return t_sum_all(t, t_mul(t, t_add(t, t.leaf(a), t.leaf(row)),
                                t.leaf(a)));
    });
    CHECK(r.pass);
  }
  SUBCASE("sub") {
    auto r = check_gradients({&a, &b}, [&](Tape& t) {
      Var d = t_sub(t, t.leaf(a), t.leaf(b));
      return t_sum_all(t, t_mul(t, d, d));
    });
    CHECK(r.pass);
  }
  SUBCASE("mul with broadcasting") {
    auto r = check_gradients({&a, &row}, [&](Tape& t) {
      return t_sum_all(t, t_mul(t, t.leaf(a), t.leaf(row)));
    });
    CHECK(r.pass);
  }
  SUBCASE("scale, sigmoid, reshape, mean") {
    auto r = check_gradients({&a}, [&](Tape& t) {
      Var x = t_scale(t, t.leaf(a), real(1.7));
      x = t_sigmoid(t, x);
      x = t_reshape(t, x, {3, 2});
      return t_mean_all(t, x);
    });
    CHECK(r.pass);
  }
  SUBCASE("matmul") {
    auto r = check_gradients({&m1, &m2}, [&](Tape& t) {
      Var y = t_matmul(t, t.leaf(m1), t.leaf(m2));
      return t_sum_all(t, t_mul(t, y, y));
    });
    CHECK(r.pass);
  }
}

TEST_CASE("softmax cross-entropy value matches a log-sum-exp oracle") {
  Tensor logits = Tensor::from_values({2, 3}, rv({1, 2, 0.5, -1, 0, 3}));
  const std::vector<int> labels = {1, 2};

  Tape tape;
  Var loss = softmax_cross_entropy(tape, tape.leaf(logits), labels);

  double expect = 0;
  const double rows[2][3] = {{1, 2, 0.5}, {-1, 0, 3}};
  for (int r = 0; r < 2; ++r) {
    double mx = rows[r][0];
    for (double v : rows[r]) mx = std::max(mx, v);
    double lse = 0;
    for (double v : rows[r]) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    expect += lse - rows[r][labels[r]];
  }
  expect /= 2;
  CHECK(static_cast<double>(tape.value(loss).item()) ==
        doctest::Approx(expect).epsilon(tol(1e-5, 1e-12)));
}

TEST_CASE("softmax cross-entropy gradient is (p - onehot) / batch") {
  Tensor logits = rand_normal({4, 5}, 205);
  const std::vector<int> labels = {0, 3, 2, 4};

  Tape tape;
  Var lv = tape.leaf(logits);
  Var loss = softmax_cross_entropy(tape, lv, labels);
  tape.backward(loss, Tensor::scalar(real(1)));
  Tensor g = tape.grad(lv);

  Tensor probs = softmax_rows(logits);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      double expect = static_cast<double>(probs.at(r * 5 + c)) / 4.0;
      if (static_cast<int>(c) == labels[r]) expect -= 0.25;
      CHECK(static_cast<double>(g.at(r * 5 + c)) ==
            doctest::Approx(expect).epsilon(tol(1e-4, 1e-10)));
    }
  }
}

TEST_CASE("softmax cross-entropy input validation") {
  Tape tape;
  Var bad_rank = tape.leaf(Tensor::zeros({4}));
  CHECK_THROWS_AS(softmax_cross_entropy(tape, bad_rank, {0}), ShapeError);
  Var ok = tape.leaf(Tensor::zeros({2, 3}));
  CHECK_THROWS_AS(softmax_cross_entropy(tape, ok, {0}), ShapeError);
  CHECK_THROWS_AS(softmax_cross_entropy(tape, ok, {0, 3}), ArgumentError);
}

TEST_CASE("softmax rows: normalized and shift invariant") {
  Tensor logits = rand_normal({3, 6}, 206);
  Tensor p = softmax_rows(logits);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) s += static_cast<double>(p.at(r * 6 + c));
    CHECK(s == doctest::Approx(1.0).epsilon(tol(1e-5, 1e-12)));
  }
  Tensor shifted = softmax_rows(add_scalar(logits, real(7)));
  for (std::size_t i = 0; i < p.numel(); ++i) {
    CHECK(static_cast<double>(shifted.at(i)) ==
          doctest::Approx(static_cast<double>(p.at(i)))
              .epsilon(tol(1e-4, 1e-12)));
  }
}

TEST_CASE("the checker itself flags a wrong analytic gradient") {
  if (!kRealIsDouble) return;
  Parameter p("p", Tensor::from_values({3}, rv({1, -2, 0.5})));
  auto fn = [&](bool with_grad) {
    double loss = 0;
    for (real v : p.value.values()) loss += static_cast<double>(v) * v;
    if (with_grad) {
      p.zero_grad();
      real* g = p.grad.mutable_data();
      for (std::size_t i = 0; i < 3; ++i) g[i] = real(3) * p.value.at(i);
    }
    return loss;
  };
  std::vector<Parameter*> params = {&p};
  auto report = finite_diff_check(std::span<Parameter* const>{params}, fn);
  CHECK_FALSE(report.pass);
  CHECK(report.failures.size() == 3);
  CHECK(report.worst.param == "p");
}

TEST_CASE("non-finite evaluations abort the check") {
  Parameter p("p", Tensor::from_values({1}, rv({1})));
  auto fn = [&](bool) { return std::numeric_limits<double>::quiet_NaN(); };
  std::vector<Parameter*> params = {&p};
  CHECK_THROWS_AS(finite_diff_check(std::span<Parameter* const>{params}, fn),
                  NumericError);
}
