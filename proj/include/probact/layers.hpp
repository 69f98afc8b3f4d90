#pragma once

#include <memory>
#include <string>
#include <vector>

#include "probact/activations.hpp"
#include "probact/autodiff.hpp"
#include "probact/tensor.hpp"

namespace probact::nn {

// Per-forward-pass context. pass_id feeds NoiseKey::global_step, so every
// stochastic site draws fresh, replayable noise each pass.
struct PassContext {
  bool training = false;
  std::uint64_t pass_id = 0;
  std::uint64_t noise_seed = 0;
  EvalMode eval_mode = {};  // honored by stochastic sites when !training
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Var forward(Tape& tape, Var x, const PassContext& ctx) = 0;
  virtual void collect_parameters(std::vector<Parameter*>& out) {}
  virtual std::string describe() const = 0;
};

class Dense : public Layer {
 public:
  Dense(std::size_t in, std::size_t out, std::uint64_t seed,
        std::uint64_t stream, std::string name);
  Var forward(Tape& tape, Var x, const PassContext& ctx) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string describe() const override;
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_;  // [in, out]
  Parameter bias_;    // [out]
};

class Conv2d : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t padding, std::uint64_t seed, std::uint64_t stream,
         std::string name);
  Var forward(Tape& tape, Var x, const PassContext& ctx) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string describe() const override;
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_;  // [out, in, k, k]
  Parameter bias_;    // [out]
  std::size_t kernel_, padding_;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(std::size_t kernel = 2, std::size_t stride = 2);
  Var forward(Tape& tape, Var x, const PassContext& ctx) override;
  std::string describe() const override;

 private:
  std::size_t kernel_, stride_;
};

class BatchNorm : public Layer {
 public:
  // channels: C of an NCHW input, or the feature count of an NF input.
  BatchNorm(std::size_t channels, std::string name, real eps = real(1e-5),
            real momentum = real(0.1));
  Var forward(Tape& tape, Var x, const PassContext& ctx) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string describe() const override;
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }

 private:
  Parameter gamma_, beta_;
  Tensor running_mean_, running_var_;
  std::size_t channels_;
  real eps_, momentum_;
};

class Dropout : public Layer {
 public:
  Dropout(real p, std::uint32_t site_id);
  Var forward(Tape& tape, Var x, const PassContext& ctx) override;
  std::string describe() const override;

 private:
  real p_;
  std::uint32_t site_id_;
};

class Flatten : public Layer {
 public:
  Var forward(Tape& tape, Var x, const PassContext& ctx) override;
  std::string describe() const override;
};

// relu | leaky-relu | swish (stateless)
class SimpleActivation : public Layer {
 public:
  enum class Kind { kRelu, kLeakyRelu, kSwish };
  explicit SimpleActivation(Kind kind);
  Var forward(Tape& tape, Var x, const PassContext& ctx) override;
  std::string describe() const override;

 private:
  Kind kind_;
};

class PRelu : public Layer {
 public:
  // One trainable slope per channel, initialized to 0.25.
  PRelu(Shape slope_shape, std::string name);
  Var forward(Tape& tape, Var x, const PassContext& ctx) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string describe() const override;

 private:
  Parameter slope_;
};

class ProbActLayer : public Layer {
 public:
  // Owned parameter (element-wise / bounded). param_shape must broadcast
  // against the activation map.
  ProbActLayer(ProbActConfig config, Shape param_shape, std::uint32_t site_id,
               std::uint64_t seed, std::uint64_t stream, std::string name);
  // Fixed sigma (no parameter).
  ProbActLayer(ProbActConfig config, std::uint32_t site_id);
  // Single shared trainable sigma owned elsewhere.
  ProbActLayer(ProbActConfig config, Parameter* shared_sigma,
               std::uint32_t site_id);

  Var forward(Tape& tape, Var x, const PassContext& ctx) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string describe() const override;

  const ProbActConfig& config() const { return config_; }
  std::uint32_t site_id() const { return site_id_; }
  // Current sigma values (after the bounded transform if applicable).
  Tensor current_sigma() const;
  // Raw trainable tensor (sigma or k); undefined in fixed mode.
  const Tensor* raw_param() const;

 private:
  const Tensor& param_value() const;

  ProbActConfig config_;
  Parameter own_param_;            // element-wise sigma or k
  Parameter* shared_sigma_ = nullptr;  // single mode
  Tensor fixed_sigma_;             // fixed mode
  std::uint32_t site_id_ = 0;
};

}  // namespace probact::nn
