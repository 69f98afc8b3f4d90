#include <cmath>
#include <vector>

#include "doctest.h"
#include "probact/layers.hpp"
#include "test_util.hpp"

using namespace probact;
using namespace probact::nn;
using test::check_gradients;
using test::rand_normal;
using test::rv;
using test::tol;

namespace {

Tensor layer_out(Layer& layer, const Tensor& x, const PassContext& ctx = {}) {
  Tape tape(false);
  Var v = layer.forward(tape, tape.leaf(x), ctx);
  return tape.value(v);
}

// Direct convolution, the oracle for the im2col path.
Tensor conv_reference(const Tensor& x, const Tensor& w, const Tensor& b,
                      std::size_t pad) {
  const std::size_t N = x.extent(0), C = x.extent(1), H = x.extent(2),
                    W = x.extent(3);
  const std::size_t OC = w.extent(0), K = w.extent(2);
  const std::size_t Ho = H + 2 * pad - K + 1, Wo = W + 2 * pad - K + 1;
  Tensor y = Tensor::zeros({N, OC, Ho, Wo});
  real* out = y.mutable_data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t oc = 0; oc < OC; ++oc) {
      for (std::size_t ho = 0; ho < Ho; ++ho) {
        for (std::size_t wo = 0; wo < Wo; ++wo) {
          double acc = static_cast<double>(b.at(oc));
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t ki = 0; ki < K; ++ki) {
              for (std::size_t kj = 0; kj < K; ++kj) {
                const std::ptrdiff_t hi =
                    static_cast<std::ptrdiff_t>(ho + ki) -
                    static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t wi =
                    static_cast<std::ptrdiff_t>(wo + kj) -
                    static_cast<std::ptrdiff_t>(pad);
                if (hi < 0 || wi < 0 || hi >= static_cast<std::ptrdiff_t>(H) ||
                    wi >= static_cast<std::ptrdiff_t>(W)) {
                  continue;
                }
                acc += static_cast<double>(
                           x.at(((n * C + c) * H + hi) * W + wi)) *
                       static_cast<double>(
                           w.at(((oc * C + c) * K + ki) * K + kj));
              }
            }
          }
          out[((n * OC + oc) * Ho + ho) * Wo + wo] = static_cast<real>(acc);
        }
      }
    }
  }
  return y;
}

}  // namespace

TEST_CASE("dense layer computes xW + b") {
  Dense fc(3, 2, 11, 0, "fc");
  CHECK(fc.weight().name == "fc.weight");
  CHECK(fc.weight().value.shape() == Shape{3, 2});
  CHECK(fc.bias().value.shape() == Shape{2});

  Tensor x = rand_normal({4, 3}, 400);
  Tensor y = layer_out(fc, x);
  Tensor expect = ::probact::add(matmul(x, fc.weight().value), fc.bias().value);
  CHECK(y.bitwise_equal(expect));

  std::vector<Parameter*> params;
  fc.collect_parameters(params);
  CHECK(params.size() == 2);
}

TEST_CASE("dense gradients pass finite differences") {
  if (!kRealIsDouble) return;
  Dense fc(3, 2, 11, 0, "fc");
  Parameter input("x", rand_normal({4, 3}, 401));
  auto r = check_gradients({&input, &fc.weight(), &fc.bias()}, [&](Tape& t) {
    Var y = fc.forward(t, t.leaf(input), {});
    return t_sum_all(t, t_mul(t, y, y));
  });
  CHECK(r.pass);
}

TEST_CASE("conv with a centered identity kernel is a no-op") {
  Conv2d conv(1, 1, 3, 1, 1, 0, "conv");
  Tensor w = Tensor::zeros({1, 1, 3, 3});
  w.mutable_data()[4] = real(1);  // center tap
  conv.weight().value = w;
  conv.bias().value = Tensor::zeros({1});

  Tensor x = rand_normal({2, 1, 5, 6}, 402);
  CHECK(layer_out(conv, x).bitwise_equal(x));
}

TEST_CASE("conv matches the direct-convolution oracle") {
  Conv2d conv(3, 4, 3, 1, 12, 0, "conv");
  Tensor x = rand_normal({2, 3, 5, 4}, 403);
  Tensor y = layer_out(conv, x);
  Tensor ref = conv_reference(x, conv.weight().value, conv.bias().value, 1);
  REQUIRE(y.shape() == ref.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) {
    CHECK(test::rel_err(y.at(i), ref.at(i)) < tol(1e-4, 1e-12));
  }
}

TEST_CASE("conv rejects wrong input channels and rank") {
  Conv2d conv(3, 4, 3, 1, 12, 0, "conv");
  Tape tape(false);
  CHECK_THROWS_AS(
      conv.forward(tape, tape.leaf(Tensor::zeros({1, 2, 5, 5})), {}),
      ShapeError);
  CHECK_THROWS_AS(conv.forward(tape, tape.leaf(Tensor::zeros({2, 5, 5})), {}),
                  ShapeError);
}

TEST_CASE("conv gradients pass finite differences") {
  if (!kRealIsDouble) return;
  Conv2d conv(2, 3, 3, 1, 13, 0, "conv");
  Parameter input("x", rand_normal({2, 2, 4, 4}, 404));
  auto r = check_gradients({&input, &conv.weight(), &conv.bias()},
                           [&](Tape& t) {
                             Var y = conv.forward(t, t.leaf(input), {});
                             return t_sum_all(t, t_mul(t, y, y));
                           });
  CHECK(r.pass);
}

TEST_CASE("maxpool picks window maxima") {
  MaxPool2d pool(2, 2);
  Tensor x = Tensor::from_values({1, 1, 2, 2}, rv({1, 2, 3, 4}));
  Tensor y = layer_out(pool, x);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.at(0) == real(4));

  Tensor big = Tensor::from_values(
      {1, 1, 4, 4}, rv({1, 2, 9, 4, 5, 6, 7, 8, 0, -1, -2, -3, 4, 4, 4, 4}));
  Tensor yb = layer_out(pool, big);
  REQUIRE(yb.shape() == Shape{1, 1, 2, 2});
  CHECK(yb.at(0) == real(6));
  CHECK(yb.at(1) == real(9));
  CHECK(yb.at(2) == real(4));
  CHECK(yb.at(3) == real(4));
}

TEST_CASE("maxpool rejects non-tileable inputs") {
  MaxPool2d pool(2, 2);
  Tape tape(false);
  CHECK_THROWS_AS(
      pool.forward(tape, tape.leaf(Tensor::zeros({1, 1, 5, 4})), {}),
      ShapeError);
  CHECK_THROWS_AS(MaxPool2d(0, 2), ArgumentError);
}

TEST_CASE("maxpool routes gradient to the winner, first index on ties") {
  MaxPool2d pool(2, 2);
  Tensor x = Tensor::from_values({1, 1, 2, 2}, rv({1, 4, 3, 2}));
  Tape tape;
  Var v = pool.forward(tape, tape.leaf(x), {});
  tape.backward(t_sum_all(tape, v), Tensor::scalar(real(1)));

  Tensor tie = Tensor::full({1, 1, 2, 2}, real(7));
  Tape tape2;
  Var in = tape2.leaf(tie);
  Var out = pool.forward(tape2, in, {});
  tape2.backward(t_sum_all(tape2, out), Tensor::scalar(real(1)));
  Tensor g = tape2.grad(in);
  CHECK(g.at(0) == real(1));
  CHECK(g.at(1) == real(0));
  CHECK(g.at(2) == real(0));
  CHECK(g.at(3) == real(0));
}

TEST_CASE("maxpool gradients pass finite differences") {
  if (!kRealIsDouble) return;
  MaxPool2d pool(2, 2);
  Parameter input("x", rand_normal({2, 2, 4, 4}, 405));
  auto r = check_gradients({&input}, [&](Tape& t) {
    Var y = pool.forward(t, t.leaf(input), {});
    return t_sum_all(t, t_mul(t, y, y));
  });
  CHECK(r.pass);
}

TEST_CASE("batch norm normalizes per channel in training") {
  BatchNorm bn(3, "bn");
  Tensor x = rand_normal({8, 3, 2, 2}, 406);
  PassContext train;
  train.training = true;
  Tensor y = layer_out(bn, x, train);

  // gamma=1, beta=0 at init: each channel of y has mean 0, variance ~1
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, sq = 0;
    std::size_t cnt = 0;
    for (std::size_t n = 0; n < 8; ++n) {
      for (std::size_t i = 0; i < 4; ++i) {
        const double v = y.at(((n * 3 + c) * 4) + i);
        s += v;
        sq += v * v;
        ++cnt;
      }
    }
    const double mean = s / cnt;
    CHECK(std::fabs(mean) < tol(1e-4, 1e-10));
    CHECK(sq / cnt - mean * mean == doctest::Approx(1.0).epsilon(1e-2));
  }
}

TEST_CASE("a constant channel collapses to beta") {
  BatchNorm bn(2, "bn");
  bn.beta().value = Tensor::from_values({2}, rv({0.5, -1}));
  Tensor x = Tensor::zeros({4, 2});
  real* p = x.mutable_data();
  for (std::size_t n = 0; n < 4; ++n) {
    p[n * 2 + 0] = real(3);  // constant channel
    p[n * 2 + 1] = real(n);
  }
  PassContext train;
  train.training = true;
  Tensor y = layer_out(bn, x, train);
  for (std::size_t n = 0; n < 4; ++n) {
    CHECK(y.at(n * 2 + 0) == real(0.5));
  }
}

TEST_CASE("batch norm running statistics follow the momentum rule") {
  BatchNorm bn(1, "bn");
  Tensor x = Tensor::from_values({4, 1}, rv({1, 2, 3, 4}));
  PassContext train;
  train.training = true;
  layer_out(bn, x, train);

  // mean 2.5, biased var 1.25, unbiased var 5/3; momentum 0.1 from (0,1)
  CHECK(static_cast<double>(bn.running_mean().at(0)) ==
        doctest::Approx(0.25).epsilon(tol(1e-5, 1e-12)));
  CHECK(static_cast<double>(bn.running_var().at(0)) ==
        doctest::Approx(0.9 + 0.1 * 5.0 / 3.0).epsilon(tol(1e-5, 1e-12)));
}

TEST_CASE("batch norm eval uses running statistics") {
  BatchNorm bn(2, "bn");
  bn.running_mean() = Tensor::from_values({2}, rv({1, -1}));
  bn.running_var() = Tensor::from_values({2}, rv({4, 0.25}));
  Tensor x = Tensor::from_values({1, 2}, rv({3, 0}));
  Tensor y = layer_out(bn, x, {});  // eval mode
  CHECK(static_cast<double>(y.at(0)) ==
        doctest::Approx((3.0 - 1.0) / std::sqrt(4.0 + 1e-5)).epsilon(1e-4));
  CHECK(static_cast<double>(y.at(1)) ==
        doctest::Approx(1.0 / std::sqrt(0.25 + 1e-5)).epsilon(1e-4));
}

TEST_CASE("batch norm needs two samples to train") {
  BatchNorm bn(2, "bn");
  Tape tape(false);
  PassContext train;
  train.training = true;
  CHECK_THROWS_AS(
      bn.forward(tape, tape.leaf(Tensor::zeros({1, 2})), train), UsageError);
  CHECK_THROWS_AS(
      bn.forward(tape, tape.leaf(Tensor::zeros({4, 3})), train), ShapeError);
}

TEST_CASE("batch norm gradients pass finite differences") {
  if (!kRealIsDouble) return;
  BatchNorm bn(2, "bn");
  bn.gamma().value = Tensor::from_values({2}, rv({1.3, 0.8}));
  bn.beta().value = Tensor::from_values({2}, rv({0.2, -0.1}));
  Parameter input("x", rand_normal({5, 2, 2, 2}, 407));
  PassContext train;
  train.training = true;
  auto r = check_gradients({&input, &bn.gamma(), &bn.beta()}, [&](Tape& t) {
    Var y = bn.forward(t, t.leaf(input), train);
    return t_sum_all(t, t_mul(t, y, y));
  });
  CHECK(r.pass);

  // eval-mode gradient flows through the frozen affine transform
  auto re = check_gradients({&input, &bn.gamma(), &bn.beta()}, [&](Tape& t) {
    Var y = bn.forward(t, t.leaf(input), {});
    return t_sum_all(t, t_mul(t, y, y));
  });
  CHECK(re.pass);
}

TEST_CASE("dropout keeps the expectation and freezes per pass") {
  Dropout drop(real(0.5), 9);
  Tensor x = Tensor::full({100, 100}, real(1));
  PassContext ctx;
  ctx.training = true;
  ctx.pass_id = 3;
  Tensor y = layer_out(drop, x, ctx);

  std::size_t kept = 0;
  for (real v : y.values()) {
    CHECK((v == real(0) || v == real(2)));  // 1 / (1 - p) scaling
    if (v != real(0)) ++kept;
  }
  CHECK(std::fabs(static_cast<double>(kept) / 10000 - 0.5) < 0.03);

  CHECK(y.bitwise_equal(layer_out(drop, x, ctx)));
  ctx.pass_id = 4;
  CHECK_FALSE(y.bitwise_equal(layer_out(drop, x, ctx)));
}

TEST_CASE("dropout is the identity when not training or p == 0") {
  Tensor x = rand_normal({4, 4}, 408);
  Dropout drop(real(0.5), 9);
  CHECK(layer_out(drop, x, {}).bitwise_equal(x));
  Dropout off(real(0), 9);
  PassContext train;
  train.training = true;
  CHECK(layer_out(off, x, train).bitwise_equal(x));
  CHECK_THROWS_AS(Dropout(real(1), 9), ArgumentError);
  CHECK_THROWS_AS(Dropout(real(-0.1), 9), ArgumentError);
}

TEST_CASE("dropout backward masks exactly like the forward") {
  Dropout drop(real(0.5), 10);
  Tensor x = rand_normal({64}, 409);
  PassContext ctx;
  ctx.training = true;
  ctx.pass_id = 1;
  Tape tape;
  Var in = tape.leaf(x);
  Var out = drop.forward(tape, in, ctx);
  tape.backward(t_sum_all(tape, out), Tensor::scalar(real(1)));
  Tensor y = tape.value(out);
  Tensor g = tape.grad(in);
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(g.at(i) == (y.at(i) == real(0) ? real(0) : real(2)));
  }
}

TEST_CASE("flatten folds all but the batch axis") {
  Flatten flat;
  Tensor x = rand_normal({2, 3, 4, 5}, 410);
  Tensor y = layer_out(flat, x);
  CHECK(y.shape() == Shape{2, 60});
  CHECK(y.at(17) == x.at(17));

  Tensor already = rand_normal({3, 7}, 411);
  CHECK(layer_out(flat, already).bitwise_equal(already));

  Tape tape(false);
  CHECK_THROWS_AS(flat.forward(tape, tape.leaf(Tensor::zeros({5})), {}),
                  ShapeError);
}

TEST_CASE("prelu layer starts at slope 0.25 and trains it") {
  PRelu act({2, 1, 1}, "act");
  std::vector<Parameter*> params;
  act.collect_parameters(params);
  REQUIRE(params.size() == 1);
  for (real v : params[0]->value.values()) CHECK(v == real(0.25));

  Tensor x = Tensor::from_values({1, 2, 1, 1}, rv({-4, -4}));
  Tensor y = layer_out(act, x);
  CHECK(y.at(0) == real(-1));

  if (kRealIsDouble) {
    Parameter input("x", rand_normal({2, 2, 3, 3}, 412));
    auto r = check_gradients({&input, params[0]}, [&](Tape& t) {
      Var v = act.forward(t, t.leaf(input), {});
      return t_sum_all(t, t_mul(t, v, v));
    });
    CHECK(r.pass);
  }
}

TEST_CASE("stochastic activation layer: fixed mode") {
  ProbActConfig cfg;
  cfg.mode = ProbActMode::kFixed;
  cfg.fixed_sigma = 0.5;
  ProbActLayer layer(cfg, 21);

  std::vector<Parameter*> params;
  layer.collect_parameters(params);
  CHECK(params.empty());
  CHECK(layer.raw_param() == nullptr);
  CHECK(layer.current_sigma().item() == real(0.5));

  Tensor x = rand_normal({4, 8}, 413);
  PassContext ctx;
  ctx.training = true;
  ctx.pass_id = 5;
  ctx.noise_seed = 77;
  Tensor y = layer_out(layer, x, ctx);
  CHECK(y.bitwise_equal(layer_out(layer, x, ctx)));  // frozen by pass_id
  ctx.pass_id = 6;
  CHECK_FALSE(y.bitwise_equal(layer_out(layer, x, ctx)));
}

TEST_CASE("stochastic activation layer honors the eval mode") {
  ProbActConfig cfg;
  cfg.mode = ProbActMode::kFixed;
  cfg.fixed_sigma = 1;
  ProbActLayer layer(cfg, 22);
  Tensor x = rand_normal({4, 8}, 414);

  PassContext mean_ctx;
  mean_ctx.eval_mode = {EvalKind::kMean, 1};
  CHECK(layer_out(layer, x, mean_ctx).bitwise_equal(relu(x)));

  PassContext st;
  st.eval_mode = {EvalKind::kStochastic, 1};
  CHECK_FALSE(layer_out(layer, x, st).bitwise_equal(relu(x)));

  // training overrides a configured mean eval mode
  PassContext train = mean_ctx;
  train.training = true;
  CHECK_FALSE(layer_out(layer, x, train).bitwise_equal(relu(x)));
}

TEST_CASE("single-sigma layer shares an external parameter") {
  Parameter sigma("sigma", Tensor::scalar(real(0)));
  ProbActConfig cfg;
  cfg.mode = ProbActMode::kSingle;
  ProbActLayer layer(cfg, &sigma, 23);

  std::vector<Parameter*> params;
  layer.collect_parameters(params);
  CHECK(params.empty());  // owner registers the shared parameter

  Tensor x = rand_normal({4, 4}, 415);
  PassContext train;
  train.training = true;
  CHECK(layer_out(layer, x, train).bitwise_equal(relu(x)));  // sigma still 0

  sigma.value = Tensor::scalar(real(0.8));
  CHECK(layer.current_sigma().item() == real(0.8));
  CHECK_FALSE(layer_out(layer, x, train).bitwise_equal(relu(x)));
}

TEST_CASE("element-wise layer owns a map-shaped parameter") {
  ProbActConfig cfg;
  cfg.mode = ProbActMode::kElementwiseBounded;
  ProbActLayer layer(cfg, {3, 4, 4}, 24, 99, 0, "act0.k");
  std::vector<Parameter*> params;
  layer.collect_parameters(params);
  REQUIRE(params.size() == 1);
  CHECK(params[0]->name == "act0.k");
  CHECK(params[0]->value.shape() == Shape{3, 4, 4});

  // init spread ~ 1/sqrt(numel) per the fan rule for parameter maps
  const double var = test::sample_var(params[0]->value);
  CHECK(var == doctest::Approx(1.0 / 48).epsilon(0.5));

  // sigma passes through the bounded transform
  Tensor s = layer.current_sigma();
  for (real v : s.values()) {
    CHECK(v > real(0));
    CHECK(v < real(2));
  }

  ProbActConfig plain;
  plain.mode = ProbActMode::kElementwise;
  ProbActLayer unbounded(plain, {3, 4, 4}, 25, 99, 1, "act1.sigma");
  std::vector<Parameter*> p2;
  unbounded.collect_parameters(p2);
  REQUIRE(p2.size() == 1);
  CHECK(p2[0]->name == "act1.sigma");
}

TEST_CASE("stochastic layer gradients under frozen noise") {
  if (!kRealIsDouble) return;
  PassContext train;
  train.training = true;
  train.pass_id = 11;
  train.noise_seed = 5;

  SUBCASE("single sigma") {
    Parameter sigma("sigma", Tensor::scalar(real(0.4)));
    ProbActConfig cfg;
    cfg.mode = ProbActMode::kSingle;
    ProbActLayer layer(cfg, &sigma, 26);
    Parameter input("x", rand_normal({3, 6}, 416));
    auto r = check_gradients({&input, &sigma}, [&](Tape& t) {
      Var y = layer.forward(t, t.leaf(input), train);
      return t_sum_all(t, t_mul(t, y, y));
    });
    CHECK(r.pass);
  }
  SUBCASE("element-wise bounded k") {
    ProbActConfig cfg;
    cfg.mode = ProbActMode::kElementwiseBounded;
    ProbActLayer layer(cfg, {2, 3, 3}, 27, 100, 0, "act.k");
    std::vector<Parameter*> params;
    layer.collect_parameters(params);
    Parameter input("x", rand_normal({2, 2, 3, 3}, 417));
    auto r = check_gradients({&input, params[0]}, [&](Tape& t) {
      Var y = layer.forward(t, t.leaf(input), train);
      return t_sum_all(t, t_mul(t, y, y));
    });
    CHECK(r.pass);
  }
}
