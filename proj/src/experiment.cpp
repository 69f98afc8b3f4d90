#include "probact/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <utility>

#include "json.hpp"
#include "probact/error.hpp"
#include "probact/optim.hpp"

namespace probact::experiment {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

// Model geometry is a function of the config alone so checkpoints can be
// rebuilt without touching the dataset files.
void dataset_geometry(const RunConfig& cfg, Shape& input_chw,
                      std::size_t& classes) {
  if (cfg.dataset == "cifar10") {
    input_chw = {3, 32, 32};
    classes = 10;
  } else if (cfg.dataset == "cifar100") {
    input_chw = {3, 32, 32};
    classes = 100;
  } else if (cfg.dataset == "blobs" || cfg.dataset == "spirals") {
    input_chw = {2, 1, 1};
    classes = cfg.synthetic_classes;
  } else if (cfg.dataset == "image-blobs") {
    input_chw = {3, cfg.synthetic_resolution, cfg.synthetic_resolution};
    classes = cfg.synthetic_classes;
  } else {
    throw ArgumentError(
        "unknown dataset '" + cfg.dataset +
        "' (want cifar10|cifar100|blobs|spirals|image-blobs)");
  }
}

std::size_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const Tensor pred = argmax(logits, 1);
  const real* pp = pred.data();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (static_cast<int>(std::lround(pp[i])) == labels[i]) ++correct;
  }
  return correct;
}

double batch_loss(const Tensor& logits, const std::vector<int>& labels) {
  Tape tape(false);
  Var lv = tape.leaf(logits);
  Var loss = softmax_cross_entropy(tape, lv, labels);
  return static_cast<double>(tape.value(loss).item());
}

struct SigmaSummary {
  double mean, min, max;
};

SigmaSummary summarize(const Tensor& t) {
  const real* p = t.data();
  double lo = p[0], hi = p[0], acc = 0;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    lo = std::min(lo, static_cast<double>(p[i]));
    hi = std::max(hi, static_cast<double>(p[i]));
    acc += p[i];
  }
  return {acc / static_cast<double>(t.numel()), lo, hi};
}

void append_sigma_rows(RunMetrics& metrics, nn::Model& model,
                       std::size_t epoch) {
  for (std::size_t s = 0; s < model.probact_sites().size(); ++s) {
    const SigmaSummary sum =
        summarize(model.probact_sites()[s]->current_sigma());
    metrics.sigma_rows.push_back({epoch, s, sum.mean, sum.min, sum.max});
  }
}

void restore_tensors(
    const std::vector<std::pair<std::string, Tensor>>& stored,
    const std::vector<std::pair<std::string, Tensor*>>& live,
    const char* what) {
  std::map<std::string, const Tensor*> index;
  for (const auto& [name, t] : stored) index[name] = &t;
  if (index.size() != stored.size()) {
    throw CheckpointError(std::string(what) + ": duplicate tensor names");
  }
  if (stored.size() != live.size()) {
    throw CheckpointError(
        std::string(what) + ": checkpoint holds " +
        std::to_string(stored.size()) + " tensors, model expects " +
        std::to_string(live.size()));
  }
  for (const auto& [name, dst] : live) {
    const auto it = index.find(name);
    if (it == index.end()) {
      throw CheckpointError(std::string(what) + ": missing tensor '" + name +
                            "'");
    }
    if (it->second->shape() != dst->shape()) {
      throw CheckpointError(std::string(what) + ": tensor '" + name +
                            "' has shape " + shape_str(it->second->shape()) +
                            ", model expects " + shape_str(dst->shape()));
    }
    *dst = *it->second;
  }
}

void write_histogram_csv(const fs::path& path, const Tensor& values,
                         std::size_t bins) {
  const real* p = values.data();
  double lo = p[0], hi = p[0];
  for (std::size_t i = 0; i < values.numel(); ++i) {
    lo = std::min(lo, static_cast<double>(p[i]));
    hi = std::max(hi, static_cast<double>(p[i]));
  }
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> counts(bins, 0);
  for (std::size_t i = 0; i < values.numel(); ++i) {
    auto b = static_cast<std::size_t>(
        std::min<double>(static_cast<double>(bins) - 1,
                         std::max(0.0, (p[i] - lo) / width)));
    ++counts[b];
  }
  std::ofstream out = open_out(path);
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < bins; ++b) {
    out << g9(lo + width * static_cast<double>(b)) << ','
        << g9(lo + width * static_cast<double>(b + 1)) << ',' << counts[b]
        << '\n';
  }
}

}  // namespace

// --- RunConfig ---------------------------------------------------------------

std::string RunConfig::to_json() const {
  ordered_json j;
  j["model"] = model;
  j["activation"] = activation;
  j["sigma"] = sigma;
  j["alpha"] = alpha;
  j["beta"] = beta;
  j["per_channel"] = per_channel;
  j["dataset"] = dataset;
  j["dataset_dir"] = dataset_dir;
  j["fraction"] = fraction;
  j["synthetic_train"] = synthetic_train;
  j["synthetic_test"] = synthetic_test;
  j["synthetic_classes"] = synthetic_classes;
  j["synthetic_noise"] = synthetic_noise;
  j["synthetic_resolution"] = synthetic_resolution;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["optimizer"] = optimizer;
  j["base_lr"] = base_lr;
  j["weight_seed"] = weight_seed;
  j["noise_seed"] = noise_seed;
  j["subset_seed"] = subset_seed;
  j["shuffle_seed"] = shuffle_seed;
  j["dropout"] = dropout;
  j["eval_mode"] = eval_mode;
  j["out_dir"] = out_dir;
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ArgumentError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ArgumentError("config must be a JSON object");
  RunConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "model") cfg.model = value.get<std::string>();
      else if (key == "activation") cfg.activation = value.get<std::string>();
      else if (key == "sigma") cfg.sigma = value.get<double>();
      else if (key == "alpha") cfg.alpha = value.get<double>();
      else if (key == "beta") cfg.beta = value.get<double>();
      else if (key == "per_channel") cfg.per_channel = value.get<bool>();
      else if (key == "dataset") cfg.dataset = value.get<std::string>();
      else if (key == "dataset_dir") cfg.dataset_dir = value.get<std::string>();
      else if (key == "fraction") cfg.fraction = value.get<double>();
      else if (key == "synthetic_train")
        cfg.synthetic_train = value.get<std::size_t>();
      else if (key == "synthetic_test")
        cfg.synthetic_test = value.get<std::size_t>();
      else if (key == "synthetic_classes")
        cfg.synthetic_classes = value.get<std::size_t>();
      else if (key == "synthetic_noise")
        cfg.synthetic_noise = value.get<double>();
      else if (key == "synthetic_resolution")
        cfg.synthetic_resolution = value.get<std::size_t>();
      else if (key == "epochs") cfg.epochs = value.get<std::size_t>();
      else if (key == "batch_size") cfg.batch_size = value.get<std::size_t>();
      else if (key == "optimizer") cfg.optimizer = value.get<std::string>();
      else if (key == "base_lr") cfg.base_lr = value.get<double>();
      else if (key == "weight_seed")
        cfg.weight_seed = value.get<std::uint64_t>();
      else if (key == "noise_seed") cfg.noise_seed = value.get<std::uint64_t>();
      else if (key == "subset_seed")
        cfg.subset_seed = value.get<std::uint64_t>();
      else if (key == "shuffle_seed")
        cfg.shuffle_seed = value.get<std::uint64_t>();
      else if (key == "dropout") cfg.dropout = value.get<double>();
      else if (key == "eval_mode") cfg.eval_mode = value.get<std::string>();
      else if (key == "out_dir") cfg.out_dir = value.get<std::string>();
      else throw ArgumentError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("bad config value: ") + e.what());
  }
  return cfg;
}

nn::ActivationSpec RunConfig::activation_spec() const {
  nn::ActivationSpec spec = nn::parse_activation(activation);
  if (spec.kind == nn::ActivationKind::kProbAct) {
    if (spec.probact.mode == nn::ProbActMode::kFixed) {
      if (sigma < 0) throw ArgumentError("fixed sigma must be nonnegative");
      spec.probact.fixed_sigma = static_cast<real>(sigma);
    }
    spec.probact.alpha = static_cast<real>(alpha);
    spec.probact.beta = static_cast<real>(beta);
    spec.probact.per_channel = per_channel;
  }
  return spec;
}

nn::EvalMode RunConfig::parsed_eval_mode() const {
  return parse_eval_mode(eval_mode);
}

nn::ModelConfig RunConfig::model_config(const Shape& input_chw,
                                        std::size_t classes) const {
  nn::ModelConfig mc;
  mc.spec = model;
  mc.activation = activation_spec();
  mc.classes = classes;
  mc.input_shape = input_chw;
  mc.dropout = static_cast<real>(dropout);
  mc.init_seed = weight_seed;
  return mc;
}

nn::EvalMode parse_eval_mode(const std::string& text) {
  if (text == "stochastic") return {nn::EvalKind::kStochastic, 1};
  if (text == "mean") return {nn::EvalKind::kMean, 1};
  if (text.rfind("mc:", 0) == 0) {
    int n = 0;
    try {
      std::size_t used = 0;
      n = std::stoi(text.substr(3), &used);
      if (used != text.size() - 3) n = 0;
    } catch (const std::exception&) {
      n = 0;
    }
    if (n < 1) throw ArgumentError("mc eval mode needs a positive draw count");
    return {nn::EvalKind::kMcAverage, n};
  }
  throw ArgumentError("unknown eval mode '" + text +
                      "' (want stochastic|mean|mc:<n>)");
}

std::string eval_mode_name(const nn::EvalMode& mode) {
  switch (mode.kind) {
    case nn::EvalKind::kStochastic: return "stochastic";
    case nn::EvalKind::kMean: return "mean";
    case nn::EvalKind::kMcAverage:
      return "mc:" + std::to_string(mode.samples);
  }
  return "?";
}

// --- datasets ----------------------------------------------------------------

TrainTestSplit resolve_dataset(const RunConfig& config) {
  TrainTestSplit out;
  if (config.dataset == "cifar10" || config.dataset == "cifar100") {
    const auto variant = config.dataset == "cifar10"
                             ? data::CifarVariant::kCifar10
                             : data::CifarVariant::kCifar100;
    const std::string dir =
        config.dataset_dir.empty() ? "data" : config.dataset_dir;
    data::CifarData cd = data::load_cifar(dir, variant);
    out.train = std::move(cd.train);
    out.test = std::move(cd.test);
  } else {
    data::SyntheticKind kind;
    if (config.dataset == "blobs") kind = data::SyntheticKind::kBlobs;
    else if (config.dataset == "spirals")
      kind = data::SyntheticKind::kSpirals;
    else if (config.dataset == "image-blobs")
      kind = data::SyntheticKind::kImageBlobs;
    else
      throw ArgumentError("unknown dataset '" + config.dataset + "'");
    out.train = data::synthetic_dataset(
        kind, config.synthetic_train, config.synthetic_classes,
        config.synthetic_noise, config.subset_seed,
        config.synthetic_resolution);
    // Disjoint draw space for the held-out set.
    out.test = data::synthetic_dataset(
        kind, config.synthetic_test, config.synthetic_classes,
        config.synthetic_noise, config.subset_seed ^ 0x7e57da7aull,
        config.synthetic_resolution);
  }
  if (config.fraction != 1.0) {
    out.train =
        data::stratified_subset(out.train, config.fraction, config.subset_seed);
  }
  return out;
}

// --- evaluation --------------------------------------------------------------

EvalResult evaluate_model(nn::Model& model, const data::Dataset& ds,
                          const nn::EvalMode& mode, std::uint64_t noise_seed,
                          std::uint64_t& pass_counter,
                          std::size_t batch_size) {
  if (ds.size() == 0) throw ArgumentError("cannot evaluate an empty dataset");
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  std::size_t correct = 0;
  double loss_sum = 0;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + batch_size);
         ++i) {
      idx.push_back(i);
    }
    data::Batch batch = data::gather(ds, idx);
    Tensor logits;
    if (mode.kind == nn::EvalKind::kMcAverage) {
      // Average the logits of n independent all-stochastic passes.
      for (int j = 0; j < mode.samples; ++j) {
        nn::PassContext ctx{false, pass_counter++, noise_seed,
                            {nn::EvalKind::kStochastic, 1}};
        Tensor draw = model.forward_values(batch.images, ctx);
        logits = logits.defined() ? add(logits, draw) : draw;
      }
      logits = scale(logits, real(1) / static_cast<real>(mode.samples));
    } else {
      nn::PassContext ctx{false, pass_counter++, noise_seed, mode};
      logits = model.forward_values(batch.images, ctx);
    }
    correct += count_correct(logits, batch.labels);
    loss_sum += batch_loss(logits, batch.labels) *
                static_cast<double>(batch.labels.size());
  }
  return {100.0 * static_cast<double>(correct) / static_cast<double>(ds.size()),
          loss_sum / static_cast<double>(ds.size())};
}

// --- training ----------------------------------------------------------------

RunMetrics run_training(const RunConfig& config) {
  if (config.epochs == 0) throw ArgumentError("epochs must be positive");
  if (config.batch_size == 0) throw ArgumentError("batch size must be positive");
  if (config.optimizer != "adam" && config.optimizer != "sgd") {
    throw ArgumentError("unknown optimizer '" + config.optimizer +
                        "' (want adam|sgd)");
  }
  const nn::EvalMode eval_mode = config.parsed_eval_mode();

  TrainTestSplit split = resolve_dataset(config);
  if (split.train.size() < 2) {
    throw ArgumentError("training set has fewer than 2 samples");
  }

  fs::create_directories(config.out_dir);
  {
    std::ofstream cfg_out = open_out(fs::path(config.out_dir) / "config.json");
    cfg_out << config.to_json();
  }

  nn::Model model(config.model_config(split.train.sample_shape(),
                                      split.train.classes));
  const bool use_adam = config.optimizer == "adam";
  optim::Adam adam(model.parameters());

  RunMetrics metrics;
  metrics.out_dir = config.out_dir;
  const bool trainable_sigma =
      model.shared_sigma() != nullptr ||
      std::any_of(model.probact_sites().begin(), model.probact_sites().end(),
                  [](const nn::ProbActLayer* s) {
                    return s->config().trainable();
                  });
  if (trainable_sigma) append_sigma_rows(metrics, model, 0);

  std::ofstream metrics_out =
      open_out(fs::path(config.out_dir) / "metrics.csv");
  metrics_out << "epoch,lr,train_loss,train_acc,test_loss,test_acc\n";
  std::ofstream timing_out = open_out(fs::path(config.out_dir) / "timing.csv");
  timing_out << "epoch,seconds\n";

  std::uint64_t pass_counter = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = optim::step_decay(epoch, config.base_lr);
    const auto batches = data::batch_indices(
        split.train.size(), config.batch_size, config.shuffle_seed, epoch);
    std::size_t correct = 0, seen = 0;
    double loss_sum = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      // Batch norm needs pairs; a trailing singleton batch is skipped.
      if (batches[bi].size() < 2) continue;
      data::Batch batch = data::gather(split.train, batches[bi]);
      Tape tape;
      nn::PassContext ctx{true, pass_counter++, config.noise_seed, {}};
      Var logits = model.forward(tape, tape.leaf(batch.images), ctx);
      Var loss = softmax_cross_entropy(tape, logits, batch.labels);
      const double loss_value = tape.value(loss).item();
      if (!std::isfinite(loss_value)) {
        char msg[128];
        std::snprintf(msg, sizeof(msg),
                      "loss diverged at epoch %zu, batch %zu", epoch, bi);
        throw NumericError(msg);
      }
      correct += count_correct(tape.value(logits), batch.labels);
      seen += batch.labels.size();
      loss_sum += loss_value * static_cast<double>(batch.labels.size());
      optim::zero_grads(model.parameters());
      tape.backward(loss, Tensor::scalar(1));
      if (use_adam) {
        adam.step(lr);
      } else {
        optim::sgd_step(model.parameters(), lr);
      }
    }
    if (seen == 0) throw ArgumentError("no trainable batches in epoch");

    const EvalResult test = evaluate_model(model, split.test, eval_mode,
                                           config.noise_seed, pass_counter,
                                           config.batch_size);
    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.train_acc =
        100.0 * static_cast<double>(correct) / static_cast<double>(seen);
    row.test_loss = test.loss;
    row.test_acc = test.accuracy;
    metrics.epochs.push_back(row);
    metrics_out << row.epoch << ',' << g9(row.lr) << ',' << g9(row.train_loss)
                << ',' << g9(row.train_acc) << ',' << g9(row.test_loss) << ','
                << g9(row.test_acc) << '\n';
    metrics_out.flush();

    if (trainable_sigma) append_sigma_rows(metrics, model, epoch + 1);

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    metrics.epoch_seconds.push_back(seconds);
    timing_out << epoch << ',' << g9(seconds) << '\n';
    timing_out.flush();
  }

  metrics.gamma =
      gamma(metrics.epochs.back().train_acc, metrics.epochs.back().test_acc);

  io::Checkpoint ck;
  ck.config_json = config.to_json();
  ck.pass_count = pass_counter;
  ck.epochs_completed = config.epochs;
  ck.optimizer_steps = use_adam ? adam.step_count() : 0;
  for (Parameter* p : model.parameters()) {
    ck.params.emplace_back(p->name, p->value);
  }
  for (const auto& [name, t] : model.buffers()) {
    ck.buffers.emplace_back(name, *t);
  }
  if (use_adam) {
    for (const auto& [name, t] : adam.state_tensors()) {
      ck.optimizer.emplace_back(name, *t);
    }
  }
  metrics.checkpoint_path =
      (fs::path(config.out_dir) / "checkpoint.bin").string();
  io::save_checkpoint(metrics.checkpoint_path, ck);

  if (trainable_sigma) {
    export_sigma_trajectory(
        metrics, (fs::path(config.out_dir) / "sigma_trajectory.csv").string());
  }
  const nn::ActivationSpec act = config.activation_spec();
  if (act.kind == nn::ActivationKind::kProbAct && act.probact.elementwise()) {
    export_k_histograms(metrics.checkpoint_path, 32, config.out_dir);
  }
  return metrics;
}

// --- checkpoint plumbing -------------------------------------------------------

LoadedRun load_run(const std::string& checkpoint_path,
                   const std::string& dataset_dir_override) {
  LoadedRun out;
  out.checkpoint = io::load_checkpoint(checkpoint_path);
  out.config = RunConfig::from_json(out.checkpoint.config_json);
  if (!dataset_dir_override.empty()) {
    out.config.dataset_dir = dataset_dir_override;
  }
  Shape input_chw;
  std::size_t classes = 0;
  dataset_geometry(out.config, input_chw, classes);
  out.model = std::make_unique<nn::Model>(
      out.config.model_config(input_chw, classes));

  std::vector<std::pair<std::string, Tensor*>> live_params;
  for (Parameter* p : out.model->parameters()) {
    live_params.emplace_back(p->name, &p->value);
  }
  restore_tensors(out.checkpoint.params, live_params, "params");
  for (Parameter* p : out.model->parameters()) p->zero_grad();
  restore_tensors(out.checkpoint.buffers, out.model->buffers(), "buffers");
  return out;
}

EvalResult evaluate_checkpoint(const std::string& checkpoint_path,
                               const data::Dataset& ds,
                               const nn::EvalMode& mode,
                               std::uint64_t noise_seed,
                               std::size_t batch_size) {
  LoadedRun run = load_run(checkpoint_path);
  std::uint64_t pass_counter = run.checkpoint.pass_count;
  return evaluate_model(*run.model, ds, mode, noise_seed, pass_counter,
                        batch_size);
}

double gamma(double train_acc, double test_acc) {
  if (!(train_acc >= 0 && train_acc <= 100) ||
      !(test_acc >= 0 && test_acc <= 100)) {
    throw ArgumentError("accuracies must lie in [0, 100]");
  }
  return train_acc - test_acc;
}

void export_sigma_trajectory(const RunMetrics& metrics,
                             const std::string& path) {
  if (metrics.sigma_rows.empty()) {
    throw UsageError("run has no trainable sigma to export");
  }
  std::ofstream out = open_out(path);
  out << "epoch,site,mean_sigma,min_sigma,max_sigma\n";
  for (const SigmaRow& r : metrics.sigma_rows) {
    out << r.epoch << ',' << r.site << ',' << g9(r.mean) << ',' << g9(r.min)
        << ',' << g9(r.max) << '\n';
  }
}

std::vector<std::string> export_k_histograms(
    const std::string& checkpoint_path, std::size_t bins,
    const std::string& dir) {
  if (bins == 0) throw ArgumentError("histogram needs at least one bin");
  const io::Checkpoint ck = io::load_checkpoint(checkpoint_path);
  const RunConfig cfg = RunConfig::from_json(ck.config_json);
  const nn::ActivationSpec act = cfg.activation_spec();
  if (act.kind != nn::ActivationKind::kProbAct ||
      !act.probact.elementwise()) {
    throw UsageError(
        "histogram export needs an element-wise trainable activation");
  }
  fs::create_directories(dir);
  std::vector<std::string> written;
  for (const auto& [name, t] : ck.params) {
    if (name.rfind("act", 0) != 0) continue;
    const std::size_t dot = name.find('.');
    if (dot == std::string::npos) continue;
    const std::string leaf = name.substr(dot + 1);
    if (leaf != "k" && leaf != "sigma") continue;
    const std::string site = name.substr(3, dot - 3);
    const fs::path path = fs::path(dir) / ("k_hist_layer" + site + ".csv");
    write_histogram_csv(path, t, bins);
    written.push_back(path.string());
  }
  if (written.empty()) {
    throw CheckpointError("checkpoint holds no element-wise parameters");
  }
  return written;
}

void swap_activation(const std::string& checkpoint_path,
                     const std::string& out_checkpoint_path) {
  const io::Checkpoint ck = io::load_checkpoint(checkpoint_path);
  RunConfig cfg = RunConfig::from_json(ck.config_json);
  const nn::ActivationSpec act = cfg.activation_spec();
  if (act.kind != nn::ActivationKind::kProbAct) {
    throw UsageError("swap expects a checkpoint trained with the stochastic "
                     "activation");
  }
  cfg.activation = "relu";

  Shape input_chw;
  std::size_t classes = 0;
  dataset_geometry(cfg, input_chw, classes);
  nn::Model model(cfg.model_config(input_chw, classes));

  std::map<std::string, const Tensor*> index;
  for (const auto& [name, t] : ck.params) index[name] = &t;
  for (Parameter* p : model.parameters()) {
    const auto it = index.find(p->name);
    if (it == index.end()) {
      throw CheckpointError("swap: checkpoint is missing '" + p->name + "'");
    }
    if (it->second->shape() != p->value.shape()) {
      throw CheckpointError("swap: shape mismatch on '" + p->name + "'");
    }
    p->value = *it->second;
  }
  restore_tensors(ck.buffers, model.buffers(), "buffers");

  io::Checkpoint swapped;
  swapped.config_json = cfg.to_json();
  swapped.pass_count = ck.pass_count;
  swapped.epochs_completed = ck.epochs_completed;
  swapped.optimizer_steps = 0;
  for (Parameter* p : model.parameters()) {
    swapped.params.emplace_back(p->name, p->value);
  }
  for (const auto& [name, t] : model.buffers()) {
    swapped.buffers.emplace_back(name, *t);
  }
  io::save_checkpoint(out_checkpoint_path, swapped);
}

// --- reduced-data suite ---------------------------------------------------------

std::vector<SuiteCell> run_reduced_data_suite(
    const RunConfig& base, const std::vector<double>& fractions, int repeats) {
  if (repeats < 1) throw ArgumentError("suite needs at least one repeat");
  const nn::ActivationSpec act = base.activation_spec();
  if (act.kind != nn::ActivationKind::kProbAct) {
    throw ArgumentError(
        "suite config must select a probact activation (the relu baseline "
        "is added automatically)");
  }
  fs::create_directories(base.out_dir);
  std::vector<SuiteCell> cells;
  for (const double fraction : fractions) {
    for (const std::string& activation : {std::string("relu"),
                                          base.activation}) {
      SuiteCell cell;
      cell.fraction = fraction;
      cell.activation = activation;
      for (int r = 0; r < repeats; ++r) {
        RunConfig run = base;
        run.activation = activation;
        run.fraction = fraction;
        run.subset_seed = base.subset_seed + static_cast<std::uint64_t>(r);
        run.weight_seed = base.weight_seed + static_cast<std::uint64_t>(r);
        run.noise_seed = base.noise_seed + static_cast<std::uint64_t>(r);
        run.shuffle_seed = base.shuffle_seed + static_cast<std::uint64_t>(r);
        std::string act_tag = activation;
        std::replace(act_tag.begin(), act_tag.end(), ':', '-');
        char dir_name[128];
        std::snprintf(dir_name, sizeof(dir_name), "f%03d_%s_r%d",
                      static_cast<int>(std::lround(fraction * 100)),
                      act_tag.c_str(), r);
        run.out_dir = (fs::path(base.out_dir) / dir_name).string();
        const RunMetrics m = run_training(run);
        cell.subset_seeds.push_back(run.subset_seed);
        cell.test_accs.push_back(m.epochs.back().test_acc);
      }
      double acc = 0;
      for (const double a : cell.test_accs) acc += a;
      cell.mean_test_acc = acc / static_cast<double>(cell.test_accs.size());
      cells.push_back(std::move(cell));
    }
  }

  std::ofstream out =
      open_out(fs::path(base.out_dir) / "suite_summary.csv");
  out << "fraction,activation,repeat,subset_seed,test_acc\n";
  for (const SuiteCell& cell : cells) {
    for (std::size_t r = 0; r < cell.test_accs.size(); ++r) {
      out << g9(cell.fraction) << ',' << cell.activation << ',' << r << ','
          << cell.subset_seeds[r] << ',' << g9(cell.test_accs[r]) << '\n';
    }
    out << g9(cell.fraction) << ',' << cell.activation << ",mean,,"
        << g9(cell.mean_test_acc) << '\n';
  }
  return cells;
}

}  // namespace probact::experiment
