#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "probact/layers.hpp"

namespace probact::nn {

enum class ActivationKind { kRelu, kLeakyRelu, kPRelu, kSwish, kProbAct };

struct ActivationSpec {
  ActivationKind kind = ActivationKind::kRelu;
  ProbActConfig probact;  // used when kind == kProbAct
};

// Accepts relu | leaky | prelu | swish | probact:<fixed|single|elementwise|
// bounded>. ProbAct numeric knobs (sigma, alpha, beta, per-channel) are set
// on the returned spec by the caller.
ActivationSpec parse_activation(const std::string& text);
std::string activation_name(const ActivationSpec& spec);

// vgg16 | vgg-lite | bracketed plan like "[16,M,32,M,C]". Numeric entries are
// channel counts (conv + batch norm + activation site), M pools, the optional
// trailing C stands for the classifier that is always appended. -1 encodes M.
std::vector<int> parse_model_plan(const std::string& spec);

struct ModelConfig {
  std::string spec = "vgg-lite";
  ActivationSpec activation;
  std::size_t classes = 10;
  Shape input_shape = {3, 32, 32};  // C,H,W
  real dropout = 0;                 // before the classifier; 0 disables
  std::uint64_t init_seed = 1;
};

// A conv/batch-norm/activation stack ending in one linear classifier. Owns
// its layers and parameters; in single-sigma mode also the shared sigma.
class Model {
 public:
  explicit Model(const ModelConfig& config);

  Var forward(Tape& tape, Var input, const PassContext& ctx);
  // Convenience: run on a throwaway non-recording tape.
  Tensor forward_values(const Tensor& input, const PassContext& ctx);

  const std::vector<Parameter*>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor*>>& buffers() {
    return buffers_;
  }
  const std::vector<ProbActLayer*>& probact_sites() const { return sites_; }
  Parameter* shared_sigma() { return shared_sigma_.get(); }
  const ModelConfig& config() const { return config_; }
  std::size_t parameter_count() const;
  std::string describe() const;

 private:
  void add_activation_site(std::size_t channels, std::size_t h, std::size_t w,
                           std::size_t site, std::uint64_t& stream);

  ModelConfig config_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Parameter*> params_;
  std::vector<std::pair<std::string, Tensor*>> buffers_;
  std::vector<ProbActLayer*> sites_;
  std::unique_ptr<Parameter> shared_sigma_;
};

}  // namespace probact::nn
