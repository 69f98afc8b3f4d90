#pragma once

#include <string>
#include <utility>
#include <vector>

#include "probact/autodiff.hpp"

namespace probact::optim {

// lr = base * 0.1^(epoch/100). Decades come from a literal table: chained
// binary multiplications by 0.1 drift away from the decimal values.
double step_decay(std::size_t epoch, double base_lr = 0.01);

// p <- p - lr*grad for every trainable parameter.
void sgd_step(const std::vector<Parameter*>& params, double lr);

void zero_grads(const std::vector<Parameter*>& params);

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment tensors live here; they are exposed by
// name so checkpoints can round-trip the optimizer bit-exactly.
class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, AdamParams hp = {});

  void step(double lr);
  std::uint64_t step_count() const { return t_; }
  void set_step_count(std::uint64_t t) { t_ = t; }
  const AdamParams& params() const { return hp_; }

  // <param>.m / <param>.v in parameter order.
  std::vector<std::pair<std::string, Tensor*>> state_tensors();

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
  AdamParams hp_;
};

}  // namespace probact::optim
