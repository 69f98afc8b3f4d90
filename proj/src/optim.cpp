#include "probact/optim.hpp"

#include <cmath>
#include <cstdint>
#include <iterator>

#include "probact/error.hpp"

namespace probact::optim {

double step_decay(std::size_t epoch, double base_lr) {
  if (base_lr <= 0) throw ArgumentError("learning rate must be positive");
  const std::size_t k = epoch / 100;
  static constexpr double kFromBase001[] = {1e-2, 1e-3, 1e-4,  1e-5,  1e-6,
                                            1e-7, 1e-8, 1e-9, 1e-10, 1e-11};
  static constexpr double kDecade[] = {1.0,  1e-1, 1e-2, 1e-3,  1e-4, 1e-5,
                                       1e-6, 1e-7, 1e-8, 1e-9, 1e-10};
  if (base_lr == 0.01 && k < std::size(kFromBase001)) return kFromBase001[k];
  if (k < std::size(kDecade)) return base_lr * kDecade[k];
  return base_lr * std::pow(10.0, -static_cast<double>(k));
}

void sgd_step(const std::vector<Parameter*>& params, double lr) {
  if (lr <= 0) throw ArgumentError("learning rate must be positive");
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    real* pv = p->value.mutable_data();
    const real* pg = p->grad.data();
    const auto n = static_cast<std::int64_t>(p->value.numel());
    const real step = static_cast<real>(lr);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) pv[i] -= step * pg[i];
  }
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

Adam::Adam(std::vector<Parameter*> params, AdamParams hp)
    : params_(std::move(params)), hp_(hp) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter* p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape()));
    v_.push_back(Tensor::zeros(p->value.shape()));
  }
}

void Adam::step(double lr) {
  if (lr <= 0) throw ArgumentError("learning rate must be positive");
  ++t_;
  const double bc1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
  const real b1 = static_cast<real>(hp_.beta1);
  const real b2 = static_cast<real>(hp_.beta2);
  for (std::size_t j = 0; j < params_.size(); ++j) {
    Parameter* p = params_[j];
    if (!p->trainable) continue;
    real* pv = p->value.mutable_data();
    real* pm = m_[j].mutable_data();
    real* pvv = v_[j].mutable_data();
    const real* pg = p->grad.data();
    const auto n = static_cast<std::int64_t>(p->value.numel());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      const real g = pg[i];
      pm[i] = b1 * pm[i] + (1 - b1) * g;
      pvv[i] = b2 * pvv[i] + (1 - b2) * g * g;
      const double mhat = pm[i] / bc1;
      const double vhat = pvv[i] / bc2;
      pv[i] = static_cast<real>(pv[i] -
                                lr * mhat / (std::sqrt(vhat) + hp_.eps));
    }
  }
}

std::vector<std::pair<std::string, Tensor*>> Adam::state_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.reserve(params_.size() * 2);
  for (std::size_t j = 0; j < params_.size(); ++j) {
    out.emplace_back(params_[j]->name + ".m", &m_[j]);
    out.emplace_back(params_[j]->name + ".v", &v_[j]);
  }
  return out;
}

}  // namespace probact::optim
