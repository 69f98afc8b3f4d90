#include "probact/activations.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace probact::nn {

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  real* o = out.mutable_data();
  const real* p = x.data();
  const auto n = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) o[i] = p[i] > real(0) ? p[i] : real(0);
  return out;
}

Tensor relu_backward(const Tensor& upstream, const Tensor& x) {
  if (!upstream.same_shape(x)) throw ShapeError("relu_backward shape mismatch");
  Tensor out = Tensor::zeros(x.shape());
  real* o = out.mutable_data();
  const real* u = upstream.data();
  const real* p = x.data();
  const auto n = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) o[i] = p[i] > real(0) ? u[i] : real(0);
  return out;
}

namespace {
constexpr real kLeakySlope = real(0.01);
}

Tensor leaky_relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  real* o = out.mutable_data();
  const real* p = x.data();
  const auto n = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    o[i] = p[i] > real(0) ? p[i] : kLeakySlope * p[i];
  }
  return out;
}

Tensor leaky_relu_backward(const Tensor& upstream, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  real* o = out.mutable_data();
  const real* u = upstream.data();
  const real* p = x.data();
  const auto n = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    o[i] = p[i] > real(0) ? u[i] : kLeakySlope * u[i];
  }
  return out;
}

Tensor swish(const Tensor& x) {
  return mul(x, sigmoid(x));
}

Tensor swish_backward(const Tensor& upstream, const Tensor& x) {
  // d/dx x*s(x) = s(x) * (1 + x*(1-s(x)))
  Tensor s = sigmoid(x);
  Tensor out = Tensor::zeros(x.shape());
  real* o = out.mutable_data();
  const real* u = upstream.data();
  const real* p = x.data();
  const real* ps = s.data();
  const auto n = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    o[i] = u[i] * ps[i] * (real(1) + p[i] * (real(1) - ps[i]));
  }
  return out;
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
  Tensor negative = mul(slope, x);
  Tensor out = Tensor::zeros(x.shape());
  real* o = out.mutable_data();
  const real* p = x.data();
  const real* pn = negative.data();
  const auto n = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) o[i] = p[i] > real(0) ? p[i] : pn[i];
  return out;
}

PreluGrads prelu_backward(const Tensor& upstream, const Tensor& x,
                          const Tensor& slope) {
  Tensor gx_neg = mul(upstream, slope);  // broadcast slope over x
  Tensor grad_x = Tensor::zeros(x.shape());
  Tensor masked = Tensor::zeros(x.shape());  // upstream*x on the negative side
  real* pgx = grad_x.mutable_data();
  real* pm = masked.mutable_data();
  const real* u = upstream.data();
  const real* p = x.data();
  const real* pn = gx_neg.data();
  const auto n = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    if (p[i] > real(0)) {
      pgx[i] = u[i];
      pm[i] = real(0);
    } else {
      pgx[i] = pn[i];
      pm[i] = u[i] * p[i];
    }
  }
  return {std::move(grad_x), reduce_to_shape(masked, slope.shape())};
}

Tensor bounded_sigma(const Tensor& k, real alpha, real beta) {
  if (!(alpha > real(0)) || !(beta > real(0))) {
    throw ArgumentError("bounded_sigma: alpha and beta must be positive");
  }
  Tensor s = scale(sigmoid(scale(k, beta)), alpha);
  // The exact value is interior for every finite k; keep saturated elements
  // at the nearest representable value strictly inside (0, alpha).
  const real lo = std::numeric_limits<real>::min();
  const real hi = std::nextafter(alpha, real(0));
  real* p = s.mutable_data();
  const std::int64_t n = static_cast<std::int64_t>(s.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    p[i] = std::min(hi, std::max(lo, p[i]));
  }
  return s;
}

Tensor probact_apply(const Tensor& x, const Tensor& sigma, const Tensor& eps) {
  if (!eps.same_shape(x)) {
    throw UsageError("probact_apply: noise shape " + shape_str(eps.shape()) +
                     " does not match input shape " + shape_str(x.shape()));
  }
  return add(relu(x), mul(sigma, eps));
}

namespace {

Tensor sigma_from_param(const ProbActConfig& config, const Tensor& sigma_or_k) {
  if (config.mode == ProbActMode::kElementwiseBounded) {
    return bounded_sigma(sigma_or_k, config.alpha, config.beta);
  }
  return sigma_or_k;
}

}  // namespace

ProbActResult probact_forward(const Tensor& x, const ProbActConfig& config,
                              const Tensor& sigma_or_k, const NoiseKey& key,
                              std::uint64_t stream_seed, const EvalMode& eval) {
  if (eval.kind == EvalKind::kMean) {
    return {relu(x), NoiseRecord{}};
  }
  const Tensor sigma = sigma_from_param(config, sigma_or_k);
  if (eval.kind == EvalKind::kStochastic || eval.samples <= 1) {
    Tensor eps = sample_standard_normal(x.shape(), key, stream_seed);
    Tensor y = probact_apply(x, sigma, eps);
    return {std::move(y), NoiseRecord{std::move(eps), key}};
  }
  // mc-average: mean of n draws equals relu(x) + sigma * mean(eps_j)
  Tensor eps_sum = Tensor::zeros(x.shape());
  for (int j = 0; j < eval.samples; ++j) {
    NoiseKey draw = key;
    draw.draw_id = key.draw_id + static_cast<std::uint32_t>(j);
    eps_sum = add(eps_sum, sample_standard_normal(x.shape(), draw, stream_seed));
  }
  Tensor eps_avg = scale(eps_sum, real(1) / static_cast<real>(eval.samples));
  Tensor y = probact_apply(x, sigma, eps_avg);
  return {std::move(y), NoiseRecord{std::move(eps_avg), key}};
}

ProbActGrads probact_backward(const Tensor& upstream, const Tensor& x,
                              const NoiseRecord& record,
                              const ProbActConfig& config,
                              const Tensor& sigma_or_k) {
  if (!record.eps.defined() || !record.eps.same_shape(x)) {
    throw UsageError("probact_backward: noise record does not match input");
  }
  if (!upstream.same_shape(x)) {
    throw ShapeError("probact_backward: upstream shape mismatch");
  }
  ProbActGrads grads;
  grads.grad_x = relu_backward(upstream, x);
  if (config.mode == ProbActMode::kFixed) {
    return grads;
  }
  Tensor grad_sigma =
      reduce_to_shape(mul(upstream, record.eps), sigma_or_k.shape());
  if (config.mode == ProbActMode::kElementwiseBounded) {
    // chain: d sigma / d k = alpha * beta * s * (1 - s), s = sigmoid(beta k)
    Tensor s = sigmoid(scale(sigma_or_k, config.beta));
    Tensor ds = scale(mul(s, add_scalar(neg(s), real(1))),
                      config.alpha * config.beta);
    grads.grad_sigma_or_k = mul(grad_sigma, ds);
  } else {
    grads.grad_sigma_or_k = std::move(grad_sigma);
  }
  return grads;
}

}  // namespace probact::nn
