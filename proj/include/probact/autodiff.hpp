#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "probact/tensor.hpp"

namespace probact {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Tensor::zeros(value.shape())),
        trainable(train) {}

  void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

// Handle into a tape's value list.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Given the gradient w.r.t. a node's output, returns gradients w.r.t. each
// recorded input (same order; an undefined Tensor means "no gradient").
using GradFn = std::function<std::vector<Tensor>(const Tensor& upstream)>;

// Reverse-mode tape. Nodes are appended in execution order, so ids are a
// topological order by construction. Saved contexts (tensors captured by the
// GradFn closures) make backward exact without re-sampling any randomness.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var leaf(Tensor value);
  Var leaf(Parameter& p);
  Var record(Tensor value, std::vector<Var> inputs, GradFn grad_fn);

  // Stable across later leaf()/record() calls (deque storage).
  const Tensor& value(Var v) const;

  // Seeds the output gradient and sweeps the tape once. Accumulates into
  // bound Parameter::grad. A tape can only be swept once.
  void backward(Var output, Tensor seed);
  // Gradient w.r.t. any node, available after backward(); zeros if none flowed.
  Tensor grad(Var v) const;

 private:
  struct Node {
    std::vector<int> inputs;
    GradFn grad_fn;
  };
  void check(Var v) const;

  std::deque<Tensor> values_;
  std::vector<Node> nodes_;
  std::vector<Parameter*> bound_;
  std::vector<Tensor> grads_;
  bool recording_ = true;
  bool consumed_ = false;
};

// --- generic differentiable ops ------------------------------------------

Var t_add(Tape& tape, Var a, Var b);
Var t_sub(Tape& tape, Var a, Var b);
Var t_mul(Tape& tape, Var a, Var b);
Var t_scale(Tape& tape, Var a, real s);
Var t_sigmoid(Tape& tape, Var a);
Var t_matmul(Tape& tape, Var a, Var b);
Var t_reshape(Tape& tape, Var a, Shape shape);
Var t_sum_all(Tape& tape, Var a);
Var t_mean_all(Tape& tape, Var a);

// Mean softmax cross-entropy over the batch; logits (N,C).
Var softmax_cross_entropy(Tape& tape, Var logits, const std::vector<int>& labels);
// Row-wise softmax probabilities (forward value helper, not recorded).
Tensor softmax_rows(const Tensor& logits);

// --- finite differences ---------------------------------------------------

struct FiniteDiffEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0, numeric = 0, rel_err = 0;
};

struct FiniteDiffReport {
  bool pass = false;
  double max_rel_err = 0;
  std::size_t elements_checked = 0;
  FiniteDiffEntry worst;
  std::vector<FiniteDiffEntry> failures;
};

struct FiniteDiffOptions {
  std::vector<double> steps = {1e-4, 1e-5, 1e-6};
  double tolerance = 1e-4;
  std::size_t max_elements_per_param = 24;  // deterministic subsample
  std::uint64_t sample_seed = 7;
};

// `fn(with_grad)` evaluates the scalar function under test; when with_grad is
// true it must also run a backward pass that fills each parameter's grad.
// The function must be deterministic (frozen noise schedule). Relative error
// is |analytic - central| / max(|analytic|, |central|, 1e-8), minimized over
// the step sweep. Non-finite evaluations raise NumericError naming the
// parameter element.
FiniteDiffReport finite_diff_check(std::span<Parameter* const> params,
                                   const std::function<double(bool)>& fn,
                                   const FiniteDiffOptions& opt = {});

}  // namespace probact
