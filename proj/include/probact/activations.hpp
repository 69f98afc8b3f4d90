#pragma once

#include "probact/tensor.hpp"

namespace probact::nn {

enum class ProbActMode { kFixed, kSingle, kElementwise, kElementwiseBounded };

enum class EvalKind { kStochastic, kMean, kMcAverage };

struct EvalMode {
  EvalKind kind = EvalKind::kStochastic;
  int samples = 1;  // mc-average draw count
};

struct ProbActConfig {
  ProbActMode mode = ProbActMode::kFixed;
  real fixed_sigma = 0;
  real alpha = 2;  // bounded reparameterization scale
  real beta = 5;   // bounded reparameterization slope
  // One sigma per channel instead of per element (memory relief; off by
  // default -- the default is one parameter per activation-map element).
  bool per_channel = false;

  bool trainable() const { return mode != ProbActMode::kFixed; }
  bool elementwise() const {
    return mode == ProbActMode::kElementwise ||
           mode == ProbActMode::kElementwiseBounded;
  }
};

// The exact noise used by a forward pass; replaying it makes the stochastic
// unit a deterministic, differentiable function.
struct NoiseRecord {
  Tensor eps;
  NoiseKey key;
};

// --- deterministic activations (value + backward) -------------------------

Tensor relu(const Tensor& x);
// Subgradient at x == 0 is 0.
Tensor relu_backward(const Tensor& upstream, const Tensor& x);

Tensor leaky_relu(const Tensor& x);  // fixed 0.01 negative slope
Tensor leaky_relu_backward(const Tensor& upstream, const Tensor& x);

Tensor swish(const Tensor& x);  // x * sigmoid(x)
Tensor swish_backward(const Tensor& upstream, const Tensor& x);

// slope broadcasts against x (one slope per channel)
Tensor prelu(const Tensor& x, const Tensor& slope);
struct PreluGrads {
  Tensor grad_x;
  Tensor grad_slope;
};
PreluGrads prelu_backward(const Tensor& upstream, const Tensor& x,
                          const Tensor& slope);

// --- the stochastic activation --------------------------------------------

// sigma = alpha * sigmoid(beta * k), monotone in k and strictly inside
// (0, alpha): elements the sigmoid saturates to 0 or 1 land on the nearest
// representable interior value instead.
Tensor bounded_sigma(const Tensor& k, real alpha, real beta);

// y = max(0,x) + sigma*eps, with eps given explicitly (already sampled).
Tensor probact_apply(const Tensor& x, const Tensor& sigma, const Tensor& eps);

struct ProbActResult {
  Tensor y;
  NoiseRecord record;
};

// Evaluates the activation. `sigma_or_k` is the sigma tensor (fixed, single
// scalar, or element-wise) or the k tensor in bounded mode; it must broadcast
// against x. Mean mode returns max(0,x) and records no noise; mc-average(n)
// averages n stochastic draws (record holds the averaged noise, which is the
// exact sensitivity of the output to sigma).
ProbActResult probact_forward(const Tensor& x, const ProbActConfig& config,
                              const Tensor& sigma_or_k, const NoiseKey& key,
                              std::uint64_t stream_seed = 0,
                              const EvalMode& eval = {EvalKind::kStochastic, 1});

struct ProbActGrads {
  Tensor grad_x;
  Tensor grad_sigma_or_k;  // undefined in fixed mode
};

// Exact gradients under the frozen noise of `record`. grad_x follows the
// ReLU mask of x; grad_sigma is upstream*eps reduced onto the parameter
// shape (summing over the batch and, in single mode, over everything).
// Bounded mode chains through sigma = alpha*sigmoid(beta*k).
ProbActGrads probact_backward(const Tensor& upstream, const Tensor& x,
                              const NoiseRecord& record,
                              const ProbActConfig& config,
                              const Tensor& sigma_or_k);

}  // namespace probact::nn
