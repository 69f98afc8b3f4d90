#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "probact/error.hpp"
#include "probact/experiment.hpp"

namespace {

using probact::experiment::RunConfig;

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw probact::ArgumentError("cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Shared train-style options. Only flags the user actually passed override
// the config file.
struct ConfigFlags {
  std::string config_path;
  RunConfig values;
  CLI::App* cmd = nullptr;

  void attach(CLI::App& app) {
    cmd = &app;
    app.add_option("--config", config_path,
                   "JSON run config; flags override its fields");
    app.add_option("--model", values.model, "vgg16 | vgg-lite | [plan]");
    app.add_option("--activation", values.activation,
                   "relu|leaky|prelu|swish|probact:<mode>");
    app.add_option("--sigma", values.sigma, "fixed-mode sigma");
    app.add_option("--alpha", values.alpha, "bounded-mode scale");
    app.add_option("--beta", values.beta, "bounded-mode slope");
    app.add_flag("--per-channel", values.per_channel,
                 "one sigma per channel instead of per element");
    app.add_option("--dataset", values.dataset,
                   "cifar10|cifar100|blobs|spirals|image-blobs");
    app.add_option("--dataset-dir", values.dataset_dir,
                   "directory with the CIFAR binaries");
    app.add_option("--fraction", values.fraction,
                   "stratified train fraction in (0,1]");
    app.add_option("--epochs", values.epochs, "training epochs");
    app.add_option("--batch-size", values.batch_size, "minibatch size");
    app.add_option("--optimizer", values.optimizer, "adam|sgd");
    app.add_option("--lr", values.base_lr,
                   "base learning rate (decade drop every 100 epochs)");
    app.add_option("--weight-seed", values.weight_seed, "init seed");
    app.add_option("--noise-seed", values.noise_seed, "activation/dropout seed");
    app.add_option("--subset-seed", values.subset_seed, "stratified subset seed");
    app.add_option("--shuffle-seed", values.shuffle_seed, "batch order seed");
    app.add_option("--dropout", values.dropout,
                   "dropout before the classifier, 0 disables");
    app.add_option("--eval-mode", values.eval_mode, "stochastic|mean|mc:<n>");
    app.add_option("--out", values.out_dir, "output directory");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = RunConfig::from_json(slurp(config_path));
    const auto take = [&](const char* flag, auto member) {
      if (cmd->count(flag) > 0) cfg.*member = values.*member;
    };
    take("--model", &RunConfig::model);
    take("--activation", &RunConfig::activation);
    take("--sigma", &RunConfig::sigma);
    take("--alpha", &RunConfig::alpha);
    take("--beta", &RunConfig::beta);
    take("--per-channel", &RunConfig::per_channel);
    take("--dataset", &RunConfig::dataset);
    take("--dataset-dir", &RunConfig::dataset_dir);
    take("--fraction", &RunConfig::fraction);
    take("--epochs", &RunConfig::epochs);
    take("--batch-size", &RunConfig::batch_size);
    take("--optimizer", &RunConfig::optimizer);
    take("--lr", &RunConfig::base_lr);
    take("--weight-seed", &RunConfig::weight_seed);
    take("--noise-seed", &RunConfig::noise_seed);
    take("--subset-seed", &RunConfig::subset_seed);
    take("--shuffle-seed", &RunConfig::shuffle_seed);
    take("--dropout", &RunConfig::dropout);
    take("--eval-mode", &RunConfig::eval_mode);
    take("--out", &RunConfig::out_dir);
    return cfg;
  }
};

int cmd_train(const RunConfig& cfg) {
  const probact::experiment::RunMetrics m = probact::experiment::run_training(cfg);
  const auto& last = m.epochs.back();
  std::printf("trained %zu epochs\n", m.epochs.size());
  std::printf("final train acc %.2f%%  test acc %.2f%%  gamma %.2f\n",
              last.train_acc, last.test_acc, m.gamma);
  std::printf("checkpoint: %s\n", m.checkpoint_path.c_str());
  std::printf("metrics: %s/metrics.csv\n", m.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic-activation experiment runner"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "train a model per config");
  train_flags.attach(*train);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ck, eval_mode = "stochastic", eval_dir, eval_split = "test";
  std::uint64_t eval_seed = 977;
  std::size_t eval_batch = 64;
  eval->add_option("--checkpoint", eval_ck, "checkpoint file")->required();
  eval->add_option("--eval-mode", eval_mode, "stochastic|mean|mc:<n>");
  eval->add_option("--dataset-dir", eval_dir, "override the CIFAR directory");
  eval->add_option("--split", eval_split, "test|train");
  eval->add_option("--noise-seed", eval_seed, "evaluation noise seed");
  eval->add_option("--batch-size", eval_batch, "evaluation batch size");

  CLI::App* swap = app.add_subcommand(
      "swap", "replace the stochastic activation with relu");
  std::string swap_ck, swap_out;
  swap->add_option("--checkpoint", swap_ck, "trained checkpoint")->required();
  swap->add_option("--out", swap_out, "output checkpoint path")->required();

  ConfigFlags suite_flags;
  CLI::App* suite = app.add_subcommand(
      "reduced-suite", "relu vs probact across stratified fractions");
  suite_flags.attach(*suite);
  std::vector<double> fractions = {0.5, 0.25};
  int repeats = 3;
  suite->add_option("--fractions", fractions, "train fractions");
  suite->add_option("--repeats", repeats, "subsets per fraction");

  CLI::App* exp_cmd = app.add_subcommand(
      "export", "write per-site histograms of trainable sigma/k");
  std::string exp_ck, exp_dir = ".";
  std::size_t exp_bins = 32;
  exp_cmd->add_option("--checkpoint", exp_ck, "trained checkpoint")->required();
  exp_cmd->add_option("--bins", exp_bins, "histogram bins");
  exp_cmd->add_option("--out", exp_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_flags.resolve());
    if (eval->parsed()) {
      probact::experiment::LoadedRun run =
          probact::experiment::load_run(eval_ck, eval_dir);
      probact::experiment::TrainTestSplit split =
          probact::experiment::resolve_dataset(run.config);
      const probact::data::Dataset& ds =
          eval_split == "train" ? split.train : split.test;
      std::uint64_t pass_counter = run.checkpoint.pass_count;
      const probact::experiment::EvalResult r = probact::experiment::evaluate_model(
          *run.model, ds, probact::experiment::parse_eval_mode(eval_mode), eval_seed,
          pass_counter, eval_batch);
      std::printf("%s accuracy %.4f%%  loss %.6f  (%s, %zu samples)\n",
                  eval_split.c_str(), r.accuracy, r.loss, eval_mode.c_str(),
                  ds.size());
      return 0;
    }
    if (swap->parsed()) {
      probact::experiment::swap_activation(swap_ck, swap_out);
      std::printf("wrote relu checkpoint: %s\n", swap_out.c_str());
      return 0;
    }
    if (suite->parsed()) {
      const auto cells = probact::experiment::run_reduced_data_suite(
          suite_flags.resolve(), fractions, repeats);
      std::printf("%-10s %-22s %s\n", "fraction", "activation",
                  "mean test acc");
      for (const auto& cell : cells) {
        std::printf("%-10.3g %-22s %.2f%%\n", cell.fraction,
                    cell.activation.c_str(), cell.mean_test_acc);
      }
      return 0;
    }
    if (exp_cmd->parsed()) {
      const auto files =
          probact::experiment::export_k_histograms(exp_ck, exp_bins, exp_dir);
      for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
      return 0;
    }
  } catch (const probact::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
