// Command-line driver: train / evaluate / probe / synth subcommands around
// the engine, each stage re-runnable from the artifacts of the previous one.
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "disrec/runner.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::size_t> epochs;
  std::optional<std::string> run_name;
  std::optional<std::string> out_root;
};

disrec::RunConfig load_config(const CommonArgs& args) {
  disrec::RunConfig config = disrec::RunConfig::from_json_file(args.config_path);
  if (args.seed) config.seed = *args.seed;
  if (args.variant) {
    (void)disrec::variant_from_string(*args.variant);
    config.variant = *args.variant;
  }
  if (args.epochs) config.epochs = *args.epochs;
  if (args.run_name) config.run_name = *args.run_name;
  if (args.out_root) config.out_root = *args.out_root;
  return config;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration (JSON)")->required();
  auto opt = [&](const char* name, auto& field, const char* help) {
    cmd->add_option(name, field, help);
  };
  opt("--seed", args.seed, "override the config seed");
  opt("--variant", args.variant, "override the model variant");
  opt("--epochs", args.epochs, "override the epoch count");
  opt("--run-name", args.run_name, "override the run name");
  opt("--out", args.out_root, "override the output root");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DisRec group recommendation engine"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, probe_args;
  std::string eval_checkpoint, eval_compare, probe_checkpoint;

  CLI::App* cmd_train = app.add_subcommand("train", "split, fit and checkpoint a model");
  add_common(cmd_train, train_args);

  CLI::App* cmd_evaluate =
      app.add_subcommand("evaluate", "rank held-out cases and write metrics.json");
  add_common(cmd_evaluate, eval_args);
  cmd_evaluate->add_option("--checkpoint", eval_checkpoint,
                           "checkpoint path (default <run>/checkpoint.bin)");
  cmd_evaluate->add_option("--compare", eval_compare,
                           "another run directory; adds permutation-test p-values");

  CLI::App* cmd_probe =
      app.add_subcommand("probe", "rank fake-item decoys and report rank gaps");
  add_common(cmd_probe, probe_args);
  cmd_probe->add_option("--checkpoint", probe_checkpoint,
                        "checkpoint path (default <run>/checkpoint.bin)");

  CLI::App* cmd_synth =
      app.add_subcommand("synth", "generate a planted-influencer dataset");
  std::size_t synth_users = 20, synth_items = 30, synth_groups = 8;
  std::uint64_t synth_seed = 1;
  std::string synth_dir = "synthetic";
  cmd_synth->add_option("--users", synth_users, "number of users");
  cmd_synth->add_option("--items", synth_items, "number of items");
  cmd_synth->add_option("--groups", synth_groups, "number of groups");
  cmd_synth->add_option("--seed", synth_seed, "generator seed");
  cmd_synth->add_option("--out-dir", synth_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      disrec::RunConfig config = load_config(train_args);
      auto result = disrec::run_train(config);
      const auto& train_ds = result.split.train;
      std::cout << "dataset: " << train_ds.num_users << " users, "
                << train_ds.num_groups << " groups, " << train_ds.num_items
                << " items; train interactions " << train_ds.user_item.size()
                << " user-item, " << train_ds.group_item.size() << " group-item\n";
      std::cout << "trained " << config.run_name << ": " << result.log.size()
                << " epochs, final loss "
                << (result.log.empty() ? 0.0 : result.log.back().loss_total) << "\n";
      std::cout << "outputs in " << config.run_dir().string() << "\n";
    } else if (cmd_evaluate->parsed()) {
      disrec::RunConfig config = load_config(eval_args);
      disrec::EvaluateOptions options;
      if (!eval_checkpoint.empty()) options.checkpoint = eval_checkpoint;
      if (!eval_compare.empty()) options.compare_dir = eval_compare;
      auto metrics = disrec::run_evaluate(config, options);
      std::cout << metrics.dump(2) << "\n";
    } else if (cmd_probe->parsed()) {
      disrec::RunConfig config = load_config(probe_args);
      disrec::ProbeOptions options;
      if (!probe_checkpoint.empty()) options.checkpoint = probe_checkpoint;
      disrec::run_probe(config, options);
    } else if (cmd_synth->parsed()) {
      auto gen = disrec::run_synth(synth_users, synth_items, synth_groups, synth_seed,
                                   synth_dir);
      std::cout << "wrote " << gen.dataset.user_item.size() << " user-item and "
                << gen.dataset.group_item.size() << " group-item interactions to "
                << synth_dir << "\n";
    }
  } catch (const disrec::NonFiniteLossError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
