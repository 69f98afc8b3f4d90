#include "probact/model.hpp"

#include <cctype>
#include <cstdio>

#include "probact/error.hpp"

namespace probact::nn {

namespace {

// Dropout draws from its own stream; keep it disjoint from activation sites.
constexpr std::uint32_t kDropoutSiteBit = 0x80000000u;

std::string site_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%zu", prefix, i);
  return buf;
}

std::string trimmed(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

ActivationSpec parse_activation(const std::string& text) {
  ActivationSpec spec;
  if (text == "relu") {
    spec.kind = ActivationKind::kRelu;
  } else if (text == "leaky" || text == "leaky-relu") {
    spec.kind = ActivationKind::kLeakyRelu;
  } else if (text == "prelu") {
    spec.kind = ActivationKind::kPRelu;
  } else if (text == "swish") {
    spec.kind = ActivationKind::kSwish;
  } else if (text.rfind("probact:", 0) == 0) {
    spec.kind = ActivationKind::kProbAct;
    const std::string mode = text.substr(8);
    if (mode == "fixed") {
      spec.probact.mode = ProbActMode::kFixed;
      spec.probact.fixed_sigma = 1;  // overridable via --sigma
    } else if (mode == "single") {
      spec.probact.mode = ProbActMode::kSingle;
    } else if (mode == "elementwise") {
      spec.probact.mode = ProbActMode::kElementwise;
    } else if (mode == "bounded") {
      spec.probact.mode = ProbActMode::kElementwiseBounded;
    } else {
      throw ArgumentError("unknown probact mode '" + mode +
                          "' (want fixed|single|elementwise|bounded)");
    }
  } else {
    throw ArgumentError(
        "unknown activation '" + text +
        "' (want relu|leaky|prelu|swish|probact:<mode>)");
  }
  return spec;
}

std::string activation_name(const ActivationSpec& spec) {
  switch (spec.kind) {
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kLeakyRelu: return "leaky";
    case ActivationKind::kPRelu: return "prelu";
    case ActivationKind::kSwish: return "swish";
    case ActivationKind::kProbAct:
      switch (spec.probact.mode) {
        case ProbActMode::kFixed: return "probact:fixed";
        case ProbActMode::kSingle: return "probact:single";
        case ProbActMode::kElementwise: return "probact:elementwise";
        case ProbActMode::kElementwiseBounded: return "probact:bounded";
      }
  }
  throw ArgumentError("unnamed activation spec");
}

std::vector<int> parse_model_plan(const std::string& spec) {
  if (spec == "vgg16") {
    return {64,  64,  -1, 128, 128, -1, 256, 256, 256, -1,
            512, 512, 512, -1, 512, 512, 512, -1};
  }
  if (spec == "vgg-lite") {
    return {32, 32, -1, 64, 64, -1, 128, 128, -1};
  }
  if (spec.size() >= 2 && spec.front() == '[' && spec.back() == ']') {
    std::vector<int> plan;
    std::string body = spec.substr(1, spec.size() - 2);
    std::size_t pos = 0;
    bool saw_classifier = false;
    while (pos <= body.size()) {
      const std::size_t comma = body.find(',', pos);
      std::string token = trimmed(
          body.substr(pos, comma == std::string::npos ? comma : comma - pos));
      pos = comma == std::string::npos ? body.size() + 1 : comma + 1;
      if (token.empty()) continue;
      if (saw_classifier) {
        throw ArgumentError("model plan: C must be the last entry");
      }
      if (token == "M") {
        plan.push_back(-1);
      } else if (token == "C") {
        saw_classifier = true;  // classifier is appended implicitly
      } else {
        std::size_t used = 0;
        int channels = 0;
        try {
          channels = std::stoi(token, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != token.size() || channels <= 0) {
          throw ArgumentError("model plan: bad entry '" + token + "'");
        }
        plan.push_back(channels);
      }
    }
    return plan;
  }
  throw ArgumentError("unknown model spec '" + spec +
                      "' (want vgg16, vgg-lite, or a [..] plan)");
}

Model::Model(const ModelConfig& config) : config_(config) {
  if (config.input_shape.size() != 3) {
    throw ArgumentError("model input shape must be C,H,W");
  }
  if (config.classes < 2) {
    throw ArgumentError("model needs at least 2 classes");
  }
  const std::vector<int> plan = parse_model_plan(config.spec);
  std::size_t c = config.input_shape[0];
  std::size_t h = config.input_shape[1];
  std::size_t w = config.input_shape[2];

  if (config.activation.kind == ActivationKind::kProbAct &&
      config.activation.probact.mode == ProbActMode::kSingle) {
    shared_sigma_ = std::make_unique<Parameter>("sigma", Tensor::scalar(0));
  }

  std::uint64_t stream = 0;
  std::size_t site = 0;
  for (int entry : plan) {
    if (entry == -1) {
      if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0) {
        throw ShapeError(
            "model plan pools a " + std::to_string(h) + "x" +
            std::to_string(w) + " map; resolution does not tile");
      }
      layers_.push_back(std::make_unique<MaxPool2d>(2, 2));
      h /= 2;
      w /= 2;
      continue;
    }
    const auto oc = static_cast<std::size_t>(entry);
    layers_.push_back(std::make_unique<Conv2d>(
        c, oc, 3, 1, config.init_seed, stream++, site_name("conv", site)));
    layers_.push_back(
        std::make_unique<BatchNorm>(oc, site_name("bn", site)));
    add_activation_site(oc, h, w, site, stream);
    c = oc;
    ++site;
  }

  layers_.push_back(std::make_unique<Flatten>());
  if (config.dropout > 0) {
    layers_.push_back(
        std::make_unique<Dropout>(config.dropout, kDropoutSiteBit));
  }
  layers_.push_back(std::make_unique<Dense>(c * h * w, config.classes,
                                            config.init_seed, stream++, "fc"));

  if (shared_sigma_) params_.push_back(shared_sigma_.get());
  for (auto& layer : layers_) {
    layer->collect_parameters(params_);
    if (auto* bn = dynamic_cast<BatchNorm*>(layer.get())) {
      const std::string base = bn->gamma().name.substr(
          0, bn->gamma().name.size() - std::string(".gamma").size());
      buffers_.emplace_back(base + ".running_mean", &bn->running_mean());
      buffers_.emplace_back(base + ".running_var", &bn->running_var());
    }
    if (auto* site_layer = dynamic_cast<ProbActLayer*>(layer.get())) {
      sites_.push_back(site_layer);
    }
  }
}

void Model::add_activation_site(std::size_t channels, std::size_t h,
                                std::size_t w, std::size_t site,
                                std::uint64_t& stream) {
  const ActivationSpec& act = config_.activation;
  const auto site_id = static_cast<std::uint32_t>(site);
  switch (act.kind) {
    case ActivationKind::kRelu:
      layers_.push_back(std::make_unique<SimpleActivation>(
          SimpleActivation::Kind::kRelu));
      return;
    case ActivationKind::kLeakyRelu:
      layers_.push_back(std::make_unique<SimpleActivation>(
          SimpleActivation::Kind::kLeakyRelu));
      return;
    case ActivationKind::kSwish:
      layers_.push_back(std::make_unique<SimpleActivation>(
          SimpleActivation::Kind::kSwish));
      return;
    case ActivationKind::kPRelu:
      layers_.push_back(std::make_unique<PRelu>(Shape{channels, 1, 1},
                                                site_name("act", site)));
      return;
    case ActivationKind::kProbAct: {
      const ProbActConfig& pc = act.probact;
      switch (pc.mode) {
        case ProbActMode::kFixed:
          layers_.push_back(std::make_unique<ProbActLayer>(pc, site_id));
          return;
        case ProbActMode::kSingle:
          layers_.push_back(std::make_unique<ProbActLayer>(
              pc, shared_sigma_.get(), site_id));
          return;
        case ProbActMode::kElementwise:
        case ProbActMode::kElementwiseBounded: {
          const Shape shape = pc.per_channel ? Shape{channels, 1, 1}
                                             : Shape{channels, h, w};
          const char* leaf =
              pc.mode == ProbActMode::kElementwiseBounded ? ".k" : ".sigma";
          layers_.push_back(std::make_unique<ProbActLayer>(
              pc, shape, site_id, config_.init_seed, stream++,
              site_name("act", site) + leaf));
          return;
        }
      }
      return;
    }
  }
}

Var Model::forward(Tape& tape, Var input, const PassContext& ctx) {
  Var v = input;
  for (auto& layer : layers_) v = layer->forward(tape, v, ctx);
  return v;
}

Tensor Model::forward_values(const Tensor& input, const PassContext& ctx) {
  Tape tape(false);
  Var out = forward(tape, tape.leaf(input), ctx);
  return tape.value(out);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : params_) n += p->value.numel();
  return n;
}

std::string Model::describe() const {
  std::string out;
  for (const auto& layer : layers_) {
    if (!out.empty()) out += " -> ";
    out += layer->describe();
  }
  return out;
}

}  // namespace probact::nn
