// Release acceptance, numeric half (64-bit build): exhaustive gradient
// verification and the bounded-sigma shape properties. Prints one verdict
// line per criterion; the exit code is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "probact/autodiff.hpp"
#include "probact/layers.hpp"
#include "probact/model.hpp"

using namespace probact;

namespace {

int g_failures = 0;

void verdict(bool pass, const char* name, const std::string& detail) {
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
  if (!pass) ++g_failures;
}

Tensor rand_normal(const Shape& shape, std::uint32_t tag) {
  return sample_standard_normal(shape, NoiseKey{tag, 0, 0}, 0xacce97);
}

// random values pushed away from zero so kinked activations see no sign
// flips within the finite-difference step
Tensor rand_away_from_zero(const Shape& shape, std::uint32_t tag) {
  Tensor t = rand_normal(shape, tag);
  real* p = t.mutable_data();
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (std::fabs(p[i]) < real(0.1)) {
      p[i] += p[i] >= 0 ? real(0.2) : real(-0.2);
    }
  }
  return t;
}

struct CheckOutcome {
  std::string name;
  FiniteDiffReport report;
};

std::vector<CheckOutcome> g_outcomes;

void run_check(const std::string& name, std::vector<Parameter*> params,
               const std::function<double(bool)>& fn) {
  g_outcomes.push_back({name, finite_diff_check(params, fn)});
}

// scalar readout y -> sum(y * r) with a fixed random weighting, so the
// upstream gradient reaching the op under test is nontrivial
Var weighted_sum(Tape& tape, Var y, const Tensor& r) {
  return t_sum_all(tape, t_mul(tape, y, tape.leaf(r)));
}

void check_dense() {
  nn::Dense layer(6, 5, 31, 0, "fc");
  const Tensor x = rand_normal({4, 6}, 101);
  const Tensor r = rand_normal({4, 5}, 102);
  std::vector<Parameter*> ps;
  layer.collect_parameters(ps);
  run_check("dense", ps, [&](bool with_grad) {
    Tape tape;
    Var y = layer.forward(tape, tape.leaf(x), {});
    Var loss = weighted_sum(tape, y, r);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

void check_conv() {
  nn::Conv2d layer(2, 3, 3, 1, 32, 0, "conv");
  Parameter x("x", rand_normal({2, 2, 5, 4}, 103));
  const Tensor r = rand_normal({2, 3, 5, 4}, 104);
  std::vector<Parameter*> ps{&x};
  layer.collect_parameters(ps);
  run_check("conv2d", ps, [&](bool with_grad) {
    Tape tape;
    Var y = layer.forward(tape, tape.leaf(x), {});
    Var loss = weighted_sum(tape, y, r);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

void check_maxpool() {
  nn::MaxPool2d layer;
  Parameter x("x", rand_normal({2, 2, 4, 4}, 105));
  const Tensor r = rand_normal({2, 2, 2, 2}, 106);
  run_check("maxpool", {&x}, [&](bool with_grad) {
    Tape tape;
    Var y = layer.forward(tape, tape.leaf(x), {});
    Var loss = weighted_sum(tape, y, r);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

void check_batchnorm_training() {
  nn::BatchNorm layer(3, "bn");
  Parameter x("x", rand_normal({6, 3, 2, 2}, 107));
  const Tensor r = rand_normal({6, 3, 2, 2}, 108);
  std::vector<Parameter*> ps{&x};
  layer.collect_parameters(ps);
  run_check("batchnorm-training", ps, [&](bool with_grad) {
    Tape tape;
    nn::PassContext ctx;
    ctx.training = true;
    Var y = layer.forward(tape, tape.leaf(x), ctx);
    Var loss = weighted_sum(tape, y, r);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

void check_batchnorm_eval() {
  nn::BatchNorm layer(3, "bn");
  layer.running_mean() = rand_normal({3}, 109);
  Tensor var = rand_normal({3}, 110);
  {
    real* p = var.mutable_data();
    for (std::size_t i = 0; i < var.numel(); ++i) p[i] = p[i] * p[i] + real(0.5);
  }
  layer.running_var() = var;
  Parameter x("x", rand_normal({4, 3, 2, 2}, 111));
  const Tensor r = rand_normal({4, 3, 2, 2}, 112);
  std::vector<Parameter*> ps{&x};
  layer.collect_parameters(ps);
  run_check("batchnorm-eval", ps, [&](bool with_grad) {
    Tape tape;
    Var y = layer.forward(tape, tape.leaf(x), {});
    Var loss = weighted_sum(tape, y, r);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

void check_simple_activation(const char* name,
                             nn::SimpleActivation::Kind kind,
                             std::uint32_t tag) {
  nn::SimpleActivation layer(kind);
  Parameter x("x", rand_away_from_zero({3, 4, 2, 2}, tag));
  const Tensor r = rand_normal({3, 4, 2, 2}, tag + 1);
  run_check(name, {&x}, [&](bool with_grad) {
    Tape tape;
    Var y = layer.forward(tape, tape.leaf(x), {});
    Var loss = weighted_sum(tape, y, r);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

void check_prelu() {
  nn::PRelu layer({3, 1, 1}, "prelu");
  Parameter x("x", rand_away_from_zero({2, 3, 4, 4}, 120));
  const Tensor r = rand_normal({2, 3, 4, 4}, 121);
  std::vector<Parameter*> ps{&x};
  layer.collect_parameters(ps);
  run_check("prelu", ps, [&](bool with_grad) {
    Tape tape;
    Var y = layer.forward(tape, tape.leaf(x), {});
    Var loss = weighted_sum(tape, y, r);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

// frozen noise: the pass id is pinned, so every evaluation replays the same
// eps and the function under the finite-difference probe is deterministic
nn::PassContext stochastic_ctx() {
  nn::PassContext ctx;
  ctx.training = true;
  ctx.pass_id = 5;
  ctx.noise_seed = 3;
  return ctx;
}

void check_probact_single() {
  nn::ProbActConfig config;
  config.mode = nn::ProbActMode::kSingle;
  Parameter sigma("sigma", Tensor::scalar(real(0.3)));
  nn::ProbActLayer layer(config, &sigma, 2);
  Parameter x("x", rand_away_from_zero({4, 3, 2, 2}, 130));
  const Tensor r = rand_normal({4, 3, 2, 2}, 131);
  run_check("probact-single-sigma", {&x, &sigma}, [&](bool with_grad) {
    Tape tape;
    Var y = layer.forward(tape, tape.leaf(x), stochastic_ctx());
    Var loss = weighted_sum(tape, y, r);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

void check_probact_elementwise() {
  nn::ProbActConfig config;
  config.mode = nn::ProbActMode::kElementwise;
  nn::ProbActLayer layer(config, {3, 2, 2}, 4, 77, 0, "act.sigma");
  Parameter x("x", rand_away_from_zero({4, 3, 2, 2}, 132));
  const Tensor r = rand_normal({4, 3, 2, 2}, 133);
  std::vector<Parameter*> ps{&x};
  layer.collect_parameters(ps);
  run_check("probact-elementwise-sigma", ps, [&](bool with_grad) {
    Tape tape;
    Var y = layer.forward(tape, tape.leaf(x), stochastic_ctx());
    Var loss = weighted_sum(tape, y, r);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

void check_probact_bounded() {
  nn::ProbActConfig config;
  config.mode = nn::ProbActMode::kElementwiseBounded;
  nn::ProbActLayer layer(config, {3, 2, 2}, 6, 78, 0, "act.k");
  Parameter x("x", rand_away_from_zero({4, 3, 2, 2}, 134));
  const Tensor r = rand_normal({4, 3, 2, 2}, 135);
  std::vector<Parameter*> ps{&x};
  layer.collect_parameters(ps);
  run_check("probact-bounded-k", ps, [&](bool with_grad) {
    Tape tape;
    Var y = layer.forward(tape, tape.leaf(x), stochastic_ctx());
    Var loss = weighted_sum(tape, y, r);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

void check_softmax_cross_entropy() {
  Parameter logits("logits", rand_normal({5, 7}, 140));
  const std::vector<int> labels{3, 0, 6, 1, 1};
  run_check("softmax-cross-entropy", {&logits}, [&](bool with_grad) {
    Tape tape;
    Var loss = softmax_cross_entropy(tape, tape.leaf(logits), labels);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

// conv -> batchnorm -> bounded stochastic activation -> pool -> dropout ->
// classifier -> cross-entropy, differentiated end to end
void check_composite_model() {
  nn::ModelConfig mc;
  mc.spec = "[4,M,8,C]";
  mc.activation = nn::parse_activation("probact:bounded");
  mc.classes = 3;
  mc.input_shape = {3, 8, 8};
  mc.dropout = real(0.3);
  mc.init_seed = 9;
  nn::Model model(mc);
  const Tensor x = rand_normal({4, 3, 8, 8}, 150);
  const std::vector<int> labels{0, 1, 2, 0};
  run_check("composite-network", model.parameters(), [&](bool with_grad) {
    Tape tape;
    Var logits = model.forward(tape, tape.leaf(x), stochastic_ctx());
    Var loss = softmax_cross_entropy(tape, logits, labels);
    const double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss, Tensor::scalar(1));
    return v;
  });
}

void criterion_gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  check_dense();
  check_conv();
  check_maxpool();
  check_batchnorm_training();
  check_batchnorm_eval();
  check_simple_activation("relu", nn::SimpleActivation::Kind::kRelu, 114);
  check_simple_activation("leaky-relu", nn::SimpleActivation::Kind::kLeakyRelu,
                          116);
  check_simple_activation("swish", nn::SimpleActivation::Kind::kSwish, 118);
  check_prelu();
  check_probact_single();
  check_probact_elementwise();
  check_probact_bounded();
  check_softmax_cross_entropy();
  check_composite_model();
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  bool all_pass = true;
  double max_rel_err = 0;
  std::size_t elements = 0;
  std::string bad;
  for (const CheckOutcome& o : g_outcomes) {
    max_rel_err = std::max(max_rel_err, o.report.max_rel_err);
    elements += o.report.elements_checked;
    if (!o.report.pass) {
      all_pass = false;
      char msg[160];
      std::snprintf(msg, sizeof(msg), " %s(%s[%zu] analytic=%.3g central=%.3g)",
                    o.name.c_str(), o.report.worst.param.c_str(),
                    o.report.worst.index, o.report.worst.analytic,
                    o.report.worst.numeric);
      bad += msg;
    }
  }
  const bool in_time = elapsed < 120.0;
  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "%zu ops, %zu elements, max rel err %.3g (tol 1e-4), %.1fs "
                "(limit 120s)%s%s",
                g_outcomes.size(), elements, max_rel_err, elapsed,
                in_time ? "" : " OVER TIME", bad.c_str());
  verdict(all_pass && in_time, "gradient-suite", detail);
}

void criterion_bounded_sigma() {
  const std::size_t n = 10000;
  const real alpha = 2, beta = 5;

  // openness of the bound over the full +-1e3 range
  Tensor wide = Tensor::zeros({n});
  {
    real* p = wide.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = real(-1000) +
             real(2000) * static_cast<real>(i) / static_cast<real>(n - 1);
    }
  }
  const Tensor sig_wide = nn::bounded_sigma(wide, alpha, beta);
  bool open = true;
  bool nondecreasing = true;
  for (std::size_t i = 0; i < n; ++i) {
    const real s = sig_wide.at(i);
    open = open && s > real(0) && s < real(2);
    if (i > 0) nondecreasing = nondecreasing && s >= sig_wide.at(i - 1);
  }

  // strict growth where consecutive sigma values are resolvable in the
  // 64-bit format (|k| <= 6; past that the curve is flat to the last ulp)
  Tensor narrow = Tensor::zeros({n});
  {
    real* p = narrow.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = real(-6) +
             real(12) * static_cast<real>(i) / static_cast<real>(n - 1);
    }
  }
  const Tensor sig_narrow = nn::bounded_sigma(narrow, alpha, beta);
  bool strict = true;
  for (std::size_t i = 1; i < n; ++i) {
    strict = strict && sig_narrow.at(i) > sig_narrow.at(i - 1);
  }

  const double at_zero = nn::bounded_sigma(Tensor::scalar(0), alpha, beta).item();
  const double zero_err = std::fabs(at_zero - 1.0);
  const bool centered = zero_err <= 1e-12;

  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "sigma in (0,2) %s on 10^4 grid over [-1e3,1e3] "
                "(nondecreasing %s); strictly increasing %s on 10^4 grid over "
                "[-6,6]; |sigma(0)-1| = %.2g (tol 1e-12)",
                open ? "holds" : "VIOLATED", nondecreasing ? "holds" : "VIOLATED",
                strict ? "holds" : "VIOLATED", zero_err);
  verdict(open && nondecreasing && strict && centered, "bound-monotonicity",
          detail);
}

}  // namespace

int main() {
  criterion_gradient_suite();
  criterion_bounded_sigma();
  return g_failures;
}
