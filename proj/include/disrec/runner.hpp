#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "disrec/eval.hpp"
#include "disrec/training.hpp"

namespace disrec {

// Flat run configuration. Every hyperparameter is a config key with its
// default; unknown keys are rejected so typos fail fast.
struct RunConfig {
  std::string run_name = "run";
  std::string out_root;  // empty -> $DISREC_OUT_ROOT or "runs"

  std::string user_item_file;
  std::string group_item_file;
  std::string members_file;
  std::string social_file;
  std::optional<std::size_t> num_users, num_items, num_groups;

  std::string split_strategy = "leave-one-out";
  double split_ratio = 0.2;
  std::optional<std::uint64_t> split_seed;  // defaults to seed

  std::size_t embed_dim = 64;
  std::size_t layers = 3;
  std::string variant = "full";
  bool scalar_gate = false;
  bool members_only_jaccard = false;
  bool single_sigmoid_ssl = false;

  double delta = 0.5;
  double learning_rate = 1e-3;
  std::size_t batch_size = 512;
  std::size_t negatives = 10;
  std::size_t epochs = 50;
  double dropout = 0.2;
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;

  std::vector<std::size_t> eval_k = {5, 10};
  bool exclude_train_positives = true;
  bool log_timing = false;  // wall-clock seconds break byte-reproducibility

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_json_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  std::filesystem::path run_dir() const {
    std::string root = out_root;
    if (root.empty()) {
      const char* env = std::getenv("DISREC_OUT_ROOT");
      root = env ? env : "runs";
    }
    return std::filesystem::path(root) / run_name;
  }

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.model.embed_dim = embed_dim;
    tc.model.layers = layers;
    tc.model.variant = variant_from_string(variant);
    tc.model.scalar_gate = scalar_gate;
    tc.model.members_only_jaccard = members_only_jaccard;
    tc.delta = delta;
    tc.learning_rate = learning_rate;
    tc.batch_size = batch_size;
    tc.negatives = negatives;
    tc.epochs = epochs;
    tc.dropout = dropout;
    tc.seed = seed;
    tc.eval_every = eval_every;
    tc.single_sigmoid_ssl = single_sigmoid_ssl;
    return tc;
  }

  SplitSpec split_spec() const {
    SplitSpec spec;
    if (split_strategy == "leave-one-out") {
      spec.strategy = SplitSpec::Strategy::leave_one_out;
    } else if (split_strategy == "ratio") {
      spec.strategy = SplitSpec::Strategy::ratio;
    } else {
      throw ValidationError("unknown split_strategy: " + split_strategy);
    }
    spec.ratio = split_ratio;
    spec.seed = split_seed.value_or(seed);
    return spec;
  }

  InteractionDataset load() const {
    DatasetCounts counts;
    counts.users = num_users;
    counts.items = num_items;
    counts.groups = num_groups;
    return load_dataset(user_item_file, group_item_file, members_file, social_file,
                        counts);
  }
};

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{
      "run_name",       "out_root",        "user_item_file",  "group_item_file",
      "members_file",   "social_file",     "num_users",       "num_items",
      "num_groups",     "split_strategy",  "split_ratio",     "split_seed",
      "embed_dim",      "layers",          "variant",         "scalar_gate",
      "members_only_jaccard",              "single_sigmoid_ssl",
      "delta",          "learning_rate",   "batch_size",      "negatives",
      "epochs",         "dropout",         "seed",            "eval_every",
      "eval_k",         "exclude_train_positives",            "log_timing"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw ValidationError("unknown config key: " + key);
    }
  }
  RunConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("run_name", c.run_name);
  get("out_root", c.out_root);
  get("user_item_file", c.user_item_file);
  get("group_item_file", c.group_item_file);
  get("members_file", c.members_file);
  get("social_file", c.social_file);
  if (j.contains("num_users")) c.num_users = j.at("num_users").get<std::size_t>();
  if (j.contains("num_items")) c.num_items = j.at("num_items").get<std::size_t>();
  if (j.contains("num_groups")) c.num_groups = j.at("num_groups").get<std::size_t>();
  get("split_strategy", c.split_strategy);
  get("split_ratio", c.split_ratio);
  if (j.contains("split_seed")) c.split_seed = j.at("split_seed").get<std::uint64_t>();
  get("embed_dim", c.embed_dim);
  get("layers", c.layers);
  get("variant", c.variant);
  get("scalar_gate", c.scalar_gate);
  get("members_only_jaccard", c.members_only_jaccard);
  get("single_sigmoid_ssl", c.single_sigmoid_ssl);
  get("delta", c.delta);
  get("learning_rate", c.learning_rate);
  get("batch_size", c.batch_size);
  get("negatives", c.negatives);
  get("epochs", c.epochs);
  get("dropout", c.dropout);
  get("seed", c.seed);
  get("eval_every", c.eval_every);
  get("eval_k", c.eval_k);
  get("exclude_train_positives", c.exclude_train_positives);
  get("log_timing", c.log_timing);
  (void)variant_from_string(c.variant);  // fail fast on bad variants
  return c;
}

inline RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["run_name"] = run_name;
  j["out_root"] = out_root;
  j["user_item_file"] = user_item_file;
  j["group_item_file"] = group_item_file;
  j["members_file"] = members_file;
  j["social_file"] = social_file;
  if (num_users) j["num_users"] = *num_users;
  if (num_items) j["num_items"] = *num_items;
  if (num_groups) j["num_groups"] = *num_groups;
  j["split_strategy"] = split_strategy;
  j["split_ratio"] = split_ratio;
  if (split_seed) j["split_seed"] = *split_seed;
  j["embed_dim"] = embed_dim;
  j["layers"] = layers;
  j["variant"] = variant;
  j["scalar_gate"] = scalar_gate;
  j["members_only_jaccard"] = members_only_jaccard;
  j["single_sigmoid_ssl"] = single_sigmoid_ssl;
  j["delta"] = delta;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["negatives"] = negatives;
  j["epochs"] = epochs;
  j["dropout"] = dropout;
  j["seed"] = seed;
  j["eval_every"] = eval_every;
  j["eval_k"] = eval_k;
  j["exclude_train_positives"] = exclude_train_positives;
  j["log_timing"] = log_timing;
  return j;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write: " + path.string());
  out << content;
}

}  // namespace detail

// Serializes the per-epoch log; the seconds column is zeroed unless timing
// was requested, keeping default runs byte-reproducible.
inline std::string epochs_csv(const std::vector<EpochLog>& log, bool log_timing) {
  std::string csv = "epoch,loss_user,loss_group,loss_ssl,loss_total,val_hr5,seconds\n";
  for (const EpochLog& e : log) {
    csv += std::to_string(e.epoch);
    csv += "," + detail::format_double(e.loss_user);
    csv += "," + detail::format_double(e.loss_group);
    csv += "," + detail::format_double(e.loss_ssl);
    csv += "," + detail::format_double(e.loss_total);
    csv += ",";
    if (e.has_val) csv += detail::format_double(e.val_hr5);
    char seconds[32];
    std::snprintf(seconds, sizeof(seconds), "%.3f", log_timing ? e.seconds : 0.0);
    csv += ",";
    csv += seconds;
    csv += "\n";
  }
  return csv;
}

// train: split, build graphs, fit, persist checkpoint + logs + config echo.
inline TrainResult run_train(const RunConfig& config) {
  InteractionDataset dataset = config.load();
  TrainResult result = train(dataset, config.train_config(), config.split_spec());

  const auto dir = config.run_dir();
  std::filesystem::create_directories(dir);
  const std::string echo = config.to_json().dump(2) + "\n";
  detail::write_text(dir / "config.echo", echo);
  save_checkpoint(dir / "checkpoint.bin", result.params, echo);
  detail::write_text(dir / "epochs.csv", epochs_csv(result.log, config.log_timing));
  return result;
}

struct EvaluateOptions {
  std::optional<std::filesystem::path> checkpoint;  // default <run>/checkpoint.bin
  std::optional<std::filesystem::path> compare_dir;
};

// Restores a model consistent with `config` from its checkpoint.
inline ModelParams restore_params(const RunConfig& config,
                                  const InteractionDataset& train_ds,
                                  const std::filesystem::path& checkpoint_path) {
  ModelParams params = ModelParams::init(train_ds.num_users, train_ds.num_items,
                                         train_ds.num_groups,
                                         config.train_config().model, config.seed);
  load_checkpoint(checkpoint_path, params);
  return params;
}

// evaluate: rank every held-out case for both tasks, write metrics.json.
// With a comparison run, paired permutation p-values are attached.
inline nlohmann::json run_evaluate(const RunConfig& config,
                                   const EvaluateOptions& options = {}) {
  InteractionDataset dataset = config.load();
  SplitResult sp = split(dataset, config.split_spec());
  GraphBundle graphs = build_graphs(sp.train, config.members_only_jaccard);

  const auto dir = config.run_dir();
  const auto ckpt = options.checkpoint.value_or(dir / "checkpoint.bin");
  ModelParams params = restore_params(config, sp.train, ckpt);
  Representations reprs;
  {
    Tape tape;
    ForwardOutput out = forward(tape, params, graphs);
    reprs = extract_representations(tape, out);
  }

  nlohmann::json metrics;
  metrics["variant"] = config.variant;
  metrics["seed"] = config.seed;
  metrics["k"] = config.eval_k;

  std::vector<TestCase> user_cases, group_cases;
  for (const TestCase& tc : sp.test_cases) {
    (tc.kind == EntityKind::user ? user_cases : group_cases).push_back(tc);
  }

  const std::size_t keep_top = config.eval_k.empty()
                                   ? 10
                                   : *std::max_element(config.eval_k.begin(),
                                                       config.eval_k.end());
  std::map<std::string, std::vector<RankedCase>> ranked;
  ranked["user"] = rank_test_cases(reprs, user_cases, sp.train,
                                   config.exclude_train_positives, keep_top);
  ranked["group"] = rank_test_cases(reprs, group_cases, sp.train,
                                    config.exclude_train_positives, keep_top);
  for (const auto& [task, cases] : ranked) {
    nlohmann::json entry;
    nlohmann::json values;
    for (std::size_t k : config.eval_k) {
      if (cases.empty()) break;
      MetricPair m = ranking_metrics(cases, k);
      values["hr@" + std::to_string(k)] = m.hr;
      values["ndcg@" + std::to_string(k)] = m.ndcg;
    }
    entry["metrics"] = values;
    entry["n_cases"] = cases.size();
    metrics[task] = entry;
  }

  if (options.compare_dir) {
    RunConfig other = RunConfig::from_json_file(*options.compare_dir / "config.echo");
    ModelParams other_params =
        restore_params(other, sp.train, *options.compare_dir / "checkpoint.bin");
    Representations other_reprs;
    {
      Tape tape;
      ForwardOutput out = forward(tape, other_params, graphs);
      other_reprs = extract_representations(tape, out);
    }
    nlohmann::json p_values;
    for (const auto& [task, cases] : ranked) {
      if (cases.empty()) continue;
      const auto& test_cases = task == "user" ? user_cases : group_cases;
      auto other_ranked = rank_test_cases(other_reprs, test_cases, sp.train,
                                          config.exclude_train_positives, keep_top);
      nlohmann::json per_k;
      for (std::size_t k : config.eval_k) {
        std::vector<double> mine_hr, mine_ndcg, theirs_hr, theirs_ndcg;
        for (std::size_t i = 0; i < cases.size(); ++i) {
          mine_hr.push_back(case_hr(cases[i], k));
          mine_ndcg.push_back(case_ndcg(cases[i], k));
          theirs_hr.push_back(case_hr(other_ranked[i], k));
          theirs_ndcg.push_back(case_ndcg(other_ranked[i], k));
        }
        per_k["hr@" + std::to_string(k)] =
            permutation_test(mine_hr, theirs_hr, 10000, config.seed);
        per_k["ndcg@" + std::to_string(k)] =
            permutation_test(mine_ndcg, theirs_ndcg, 10000, config.seed);
      }
      p_values[task] = per_k;
    }
    metrics["p_values"] = p_values;
  }

  std::filesystem::create_directories(dir);
  detail::write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  return metrics;
}

struct ProbeOptions {
  std::optional<std::filesystem::path> checkpoint;
};

struct ProbeRunResult {
  ProbeSet probe;
  RankGapReport report;
};

// probe: build the fake-item probe over group test cases, rank with
// exclusion disabled, write probe.csv and print the gap summary.
inline ProbeRunResult run_probe(const RunConfig& config, const ProbeOptions& options = {},
                                std::ostream& out_stream = std::cout) {
  InteractionDataset dataset = config.load();
  SplitResult sp = split(dataset, config.split_spec());
  GraphBundle graphs = build_graphs(sp.train, config.members_only_jaccard);

  const auto dir = config.run_dir();
  const auto ckpt = options.checkpoint.value_or(dir / "checkpoint.bin");
  ModelParams params = restore_params(config, sp.train, ckpt);
  Representations reprs;
  {
    Tape tape;
    ForwardOutput out = forward(tape, params, graphs);
    reprs = extract_representations(tape, out);
  }

  ProbeRunResult result;
  result.probe = build_bias_probe(sp.train, sp.test_cases);
  if (result.probe.entries.empty()) {
    std::string detail = "no probe pairs constructible";
    for (const auto& reason : result.probe.skip_reasons) detail += "\n  " + reason;
    throw ValidationError(detail);
  }
  result.report = compute_rank_gap(reprs, result.probe, sp.train);

  std::string csv = "group_id,true_item,fake_item,rank_true,rank_fake,gap\n";
  for (const RankGapRow& row : result.report.rows) {
    csv += std::to_string(row.group) + "," + std::to_string(row.true_item) + "," +
           std::to_string(row.fake_item) + "," + std::to_string(row.rank_true) + "," +
           std::to_string(row.rank_fake) + "," + std::to_string(row.gap) + "\n";
  }
  std::filesystem::create_directories(dir);
  detail::write_text(dir / "probe.csv", csv);

  out_stream << "probe pairs: " << result.probe.entries.size()
             << " (skipped " << result.probe.skipped << ")\n";
  out_stream << "mean gap: " << detail::format_double(result.report.mean_gap)
             << "  median gap: " << detail::format_double(result.report.median_gap)
             << "\n";
  out_stream << "gap histogram (bin width " << RankGapReport::kBinWidth << "):\n";
  for (const auto& [bin, count] : result.report.histogram) {
    out_stream << "  [" << bin << ", " << bin + RankGapReport::kBinWidth << "): " << count
               << "\n";
  }
  return result;
}

// synth: write a planted-influencer dataset in the interaction file format.
inline SyntheticDataset run_synth(std::size_t users, std::size_t items,
                                  std::size_t groups, std::uint64_t seed,
                                  const std::filesystem::path& out_dir) {
  SyntheticDataset gen = generate_synthetic_influencer(users, items, groups, seed);
  save_dataset(gen.dataset, out_dir);
  std::string influencers = "# group_id influencer_user_id\n";
  for (std::size_t g = 0; g < gen.influencer.size(); ++g) {
    influencers += std::to_string(g) + " " + std::to_string(gen.influencer[g]) + "\n";
  }
  detail::write_text(out_dir / "influencers.txt", influencers);
  return gen;
}

}  // namespace disrec
