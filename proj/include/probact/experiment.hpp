#pragma once

#include <memory>
#include <string>
#include <vector>

#include "probact/checkpoint.hpp"
#include "probact/data.hpp"
#include "probact/model.hpp"

namespace probact::experiment {

// Everything that determines a run. Two equal configs produce byte-identical
// metrics files; all randomness flows through the four seeds.
struct RunConfig {
  std::string model = "vgg-lite";
  std::string activation = "relu";
  double sigma = 1.0;   // fixed-mode sigma
  double alpha = 2.0;   // bounded-mode scale
  double beta = 5.0;    // bounded-mode slope
  bool per_channel = false;

  std::string dataset = "image-blobs";  // cifar10|cifar100|blobs|spirals|image-blobs
  std::string dataset_dir;
  double fraction = 1.0;  // stratified train subset
  std::size_t synthetic_train = 512;
  std::size_t synthetic_test = 256;
  std::size_t synthetic_classes = 4;
  double synthetic_noise = 1.0;
  std::size_t synthetic_resolution = 16;

  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  std::string optimizer = "adam";  // adam|sgd
  double base_lr = 0.01;
  std::uint64_t weight_seed = 1;
  std::uint64_t noise_seed = 2;
  std::uint64_t subset_seed = 3;
  std::uint64_t shuffle_seed = 4;
  double dropout = 0.0;
  std::string eval_mode = "stochastic";  // stochastic|mean|mc:<n>
  std::string out_dir = "run-out";

  std::string to_json() const;
  // Strict: unknown keys are argument errors.
  static RunConfig from_json(const std::string& text);

  nn::ActivationSpec activation_spec() const;
  nn::EvalMode parsed_eval_mode() const;
  nn::ModelConfig model_config(const Shape& input_chw,
                               std::size_t classes) const;
};

nn::EvalMode parse_eval_mode(const std::string& text);
std::string eval_mode_name(const nn::EvalMode& mode);

struct EpochRow {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_acc = 0;  // percent, running aggregate over the epoch's batches
  double test_loss = 0;
  double test_acc = 0;   // percent, full test pass after the epoch
};

struct SigmaRow {
  std::size_t epoch = 0;  // 0 = before training
  std::size_t site = 0;
  double mean = 0, min = 0, max = 0;
};

struct RunMetrics {
  std::vector<EpochRow> epochs;
  std::vector<SigmaRow> sigma_rows;   // trainable-sigma runs only
  std::vector<double> epoch_seconds;  // wall clock; kept out of metrics.csv
  double gamma = 0;  // final train accuracy - final test accuracy
  std::string out_dir;
  std::string checkpoint_path;
};

struct TrainTestSplit {
  data::Dataset train;
  data::Dataset test;
};

// Applies the stratified fraction to the train split.
TrainTestSplit resolve_dataset(const RunConfig& config);

// Trains per config and writes config.json, metrics.csv, timing.csv,
// sigma_trajectory.csv (trainable sigma), k_hist_layer<i>.csv (element-wise
// modes), and checkpoint.bin under config.out_dir.
RunMetrics run_training(const RunConfig& config);

struct EvalResult {
  double accuracy = 0;  // percent
  double loss = 0;
};

// Top-1 accuracy. mc:<n> averages the logits of n independent stochastic
// passes. pass_counter advances by the number of forward passes consumed.
EvalResult evaluate_model(nn::Model& model, const data::Dataset& ds,
                          const nn::EvalMode& mode, std::uint64_t noise_seed,
                          std::uint64_t& pass_counter, std::size_t batch_size);

struct LoadedRun {
  RunConfig config;
  std::unique_ptr<nn::Model> model;
  io::Checkpoint checkpoint;
};

// Rebuilds the model a checkpoint was trained with and restores parameters,
// buffers, and the pass counter. Shape or name mismatches are checkpoint
// errors.
LoadedRun load_run(const std::string& checkpoint_path,
                   const std::string& dataset_dir_override = "");

EvalResult evaluate_checkpoint(const std::string& checkpoint_path,
                               const data::Dataset& ds,
                               const nn::EvalMode& mode,
                               std::uint64_t noise_seed,
                               std::size_t batch_size);

// train_acc - test_acc, both in [0,100].
double gamma(double train_acc, double test_acc);

void export_sigma_trajectory(const RunMetrics& metrics,
                             const std::string& path);

// One CSV per ProbAct site holding a histogram of the raw trainable values
// (sigma or k). Usage error unless the checkpoint used an element-wise mode.
std::vector<std::string> export_k_histograms(
    const std::string& checkpoint_path, std::size_t bins,
    const std::string& dir);

// Rebuilds the architecture with ReLU activations, copies every matching
// parameter and buffer, and writes a new evaluable checkpoint.
void swap_activation(const std::string& checkpoint_path,
                     const std::string& out_checkpoint_path);

struct SuiteCell {
  double fraction = 0;
  std::string activation;
  std::vector<std::uint64_t> subset_seeds;
  std::vector<double> test_accs;  // one per repeat
  double mean_test_acc = 0;
};

// For each fraction: `repeats` stratified subsets, one run per activation
// (ReLU baseline plus the configured ProbAct). Writes suite_summary.csv
// under base.out_dir.
std::vector<SuiteCell> run_reduced_data_suite(const RunConfig& base,
                                              const std::vector<double>& fractions,
                                              int repeats);

}  // namespace probact::experiment
