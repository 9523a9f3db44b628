#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "disrec/adam.hpp"
#include "disrec/eval.hpp"
#include "disrec/model.hpp"

namespace disrec {

struct TrainConfig {
  ModelConfig model;            // d, L, variant, gate and Jaccard switches
  double delta = 0.5;           // SSL weight
  double learning_rate = 1e-3;
  std::size_t batch_size = 512;
  std::size_t negatives = 10;   // negative samples per positive
  std::size_t epochs = 50;
  double dropout = 0.2;         // message dropout on propagation layers
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;  // validation HR@5 cadence; 0 disables
  bool single_sigmoid_ssl = false;  // drop the inner sigmoid of the distance

  void validate() const {
    model.validate();
    require(delta >= 0.0, "TrainConfig: delta must be non-negative");
    require(negatives >= 1, "TrainConfig: need at least one negative sample");
    require(batch_size >= 1, "TrainConfig: batch_size must be positive");
    require(epochs >= 1, "TrainConfig: epochs must be positive");
    require(dropout >= 0.0 && dropout < 1.0, "TrainConfig: dropout must be in [0,1)");
  }
};

// One training example: a positive interaction plus its sampled negatives.
struct BatchEntry {
  EntityKind kind;
  std::size_t entity;
  std::size_t positive;
  std::vector<std::size_t> negatives;
};

// Uniform sampling with replacement from the entity's non-interacted items.
inline std::vector<std::size_t> sample_negatives(const InteractionDataset& train,
                                                 EntityKind kind, std::size_t entity,
                                                 std::size_t n, Rng& rng) {
  const auto& positives = kind == EntityKind::user ? train.user_items[entity]
                                                   : train.group_items[entity];
  require(positives.size() < train.num_items,
          "sample_negatives: entity interacted with every item");
  std::vector<std::size_t> out;
  out.reserve(n);
  while (out.size() < n) {
    const std::size_t item = rng.below(train.num_items);
    if (std::binary_search(positives.begin(), positives.end(), item)) continue;
    out.push_back(item);
  }
  return out;
}

// Pairwise regression loss on a score margin: zero exactly at margin 1.
inline double pairwise_loss(double pos_score, double neg_score) {
  const double margin = pos_score - neg_score - 1.0;
  return margin * margin;
}

// Batched tape version, summed over pairs.
inline Var pairwise_loss(Tape& tape, Var pos_scores, Var neg_scores) {
  const std::size_t n = tape.value(pos_scores).size();
  return tape.squared_error(tape.sub(pos_scores, neg_scores),
                            tape.constant(Tensor::full({n}, 1.0)));
}

// Positions, within a member list, of the most and least influential members
// by attention weight. Ties resolve to the lowest index; the least
// influential member is always distinct from the most influential one.
struct SslSelection {
  std::size_t most;   // position in the member list
  std::size_t least;
};

inline SslSelection select_ssl_members(const std::vector<double>& beta) {
  require(beta.size() >= 2, "select_ssl_members: need at least two members");
  SslSelection sel{0, 0};
  for (std::size_t j = 1; j < beta.size(); ++j) {
    if (beta[j] > beta[sel.most]) sel.most = j;
  }
  sel.least = sel.most == 0 ? 1 : 0;
  for (std::size_t j = 0; j < beta.size(); ++j) {
    if (j == sel.most) continue;
    if (beta[j] < beta[sel.least]) sel.least = j;
  }
  return sel;
}

// Contrastive views for one group: the member-level aggregate is recomputed
// over the remaining members (softmax renormalized on the same scores) and
// passed back through the gate with the group-level branch unchanged.
struct SslViews {
  Var full;           // [1 x 2d]
  Var positive_view;  // most influential member removed
  Var negative_view;  // least influential member removed
  SslSelection selection;
};

inline Var reduced_group_view(Tape& tape, const ForwardOutput& out, std::size_t group,
                              const std::vector<std::size_t>& remaining) {
  std::vector<std::vector<std::size_t>> segment{remaining};
  Var member_level = tape.segment_attention(out.member_scores, out.member_projected,
                                            segment);
  Var group_level = tape.gather_rows(out.groups_level, {group});
  GateFusion fused = gate_fuse(tape, member_level, group_level, out.gate_member_w,
                               out.gate_group_w, out.gate_bias, out.scalar_gate);
  return fused.fused;
}

inline SslViews build_ssl_views(Tape& tape, const ForwardOutput& out, std::size_t group,
                                const std::vector<std::size_t>& members) {
  require(members.size() >= 2, "build_ssl_views: group too small");
  SslViews views;
  views.selection = select_ssl_members(out.member_weights[group]);
  views.full = tape.gather_rows(out.groups, {group});
  auto remaining_without = [&](std::size_t drop_pos) {
    std::vector<std::size_t> rest;
    rest.reserve(members.size() - 1);
    for (std::size_t j = 0; j < members.size(); ++j) {
      if (j != drop_pos) rest.push_back(members[j]);
    }
    return rest;
  };
  views.positive_view =
      reduced_group_view(tape, out, group, remaining_without(views.selection.most));
  views.negative_view =
      reduced_group_view(tape, out, group, remaining_without(views.selection.least));
  return views;
}

// Contrastive loss for one group:
//   -[log sigma(f(g, g')) + log sigma(1 - f(g, g''))]
// with the learnable distance f(g, g') = sigma(g Wc g'^T). The inner sigmoid
// follows the written objective; single_sigmoid drops it.
inline Var ssl_loss(Tape& tape, Var full, Var positive_view, Var negative_view, Var wc,
                    bool single_sigmoid = false) {
  Var projected = tape.matmul(full, wc);  // [1 x 2d]
  Var z_pos = tape.dot_rows(projected, positive_view);
  Var z_neg = tape.dot_rows(projected, negative_view);
  Var f_pos = single_sigmoid ? z_pos : tape.sigmoid(z_pos);
  Var f_neg = single_sigmoid ? z_neg : tape.sigmoid(z_neg);
  Var positive_term = tape.log(tape.sigmoid(f_pos));
  Var negative_term = tape.log(tape.sigmoid(tape.affine(f_neg, -1.0, 1.0)));
  return tape.scale(tape.sum(tape.add(positive_term, negative_term)), -1.0);
}

// L = L_user + L_group + delta * L_ssl.
inline Var total_loss(Tape& tape, Var user_loss, Var group_loss, Var ssl, double delta) {
  return tape.add(tape.add(user_loss, group_loss), tape.scale(ssl, delta));
}

inline double total_loss(double user_loss, double group_loss, double ssl, double delta) {
  return user_loss + group_loss + delta * ssl;
}

struct LossVars {
  Var user;
  Var group;
  Var ssl;
  Var total;
};

struct TrainStep {
  LossVars loss;
  ForwardOutput out;
};

// Builds the full objective on one tape: forward pass, the two pairwise
// ranking losses over the batch, and the contrastive term summed over every
// group with at least two members (the self-supervised objective is not
// batch-dependent).
inline TrainStep build_loss(Tape& tape, ModelParams& params, const GraphBundle& graphs,
                            const std::vector<BatchEntry>& batch,
                            const TrainConfig& config, const ForwardOptions& options) {
  TrainStep step;
  step.out = forward(tape, params, graphs, options);

  Var user_loss = tape.constant(Tensor::scalar(0.0));
  Var group_loss = tape.constant(Tensor::scalar(0.0));
  for (EntityKind kind : {EntityKind::user, EntityKind::group}) {
    std::vector<std::size_t> entities, positives;
    for (const BatchEntry& entry : batch) {
      if (entry.kind != kind) continue;
      entities.push_back(entry.entity);
      positives.push_back(entry.positive);
    }
    if (entities.empty()) continue;
    Var table = kind == EntityKind::user ? step.out.users : step.out.groups;
    Var rows = tape.gather_rows(table, entities);
    Var pos_scores = tape.dot_rows(rows, tape.gather_rows(step.out.items, positives));
    Var acc = tape.constant(Tensor::scalar(0.0));
    for (std::size_t slot = 0; slot < config.negatives; ++slot) {
      std::vector<std::size_t> negatives;
      negatives.reserve(entities.size());
      for (const BatchEntry& entry : batch) {
        if (entry.kind != kind) continue;
        require(entry.negatives.size() == config.negatives,
                "build_loss: negative count mismatch");
        negatives.push_back(entry.negatives[slot]);
      }
      Var neg_scores = tape.dot_rows(rows, tape.gather_rows(step.out.items, negatives));
      acc = tape.add(acc, pairwise_loss(tape, pos_scores, neg_scores));
    }
    (kind == EntityKind::user ? user_loss : group_loss) = acc;
  }

  Var ssl = tape.constant(Tensor::scalar(0.0));
  const bool ssl_active =
      config.delta > 0.0 && params.config.variant != Variant::no_ssl;
  if (ssl_active) {
    Var wc = step.out.ssl_bilinear;
    for (std::size_t g = 0; g < params.num_groups; ++g) {
      if (graphs.members[g].size() < 2) continue;  // no views for singletons
      SslViews views = build_ssl_views(tape, step.out, g, graphs.members[g]);
      ssl = tape.add(ssl, ssl_loss(tape, views.full, views.positive_view,
                                   views.negative_view, wc, config.single_sigmoid_ssl));
    }
  }

  step.loss.user = user_loss;
  step.loss.group = group_loss;
  step.loss.ssl = ssl;
  step.loss.total = total_loss(tape, user_loss, group_loss, ssl, config.delta);
  return step;
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss_user = 0.0;
  double loss_group = 0.0;
  double loss_ssl = 0.0;
  double loss_total = 0.0;
  bool has_val = false;
  double val_hr5 = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
  SplitResult split;
  GraphBundle graphs;
};

// Full training loop: split, graph construction, shuffled mixed batches,
// forward/backward, Adam. Deterministic given the config seed; negative
// sampling, shuffling, dropout and initialization use separate streams.
inline TrainResult train(const InteractionDataset& dataset, const TrainConfig& config,
                         const SplitSpec& split_spec) {
  config.validate();
  TrainResult result;
  result.split = split(dataset, split_spec);
  const InteractionDataset& train_ds = result.split.train;
  result.graphs = build_graphs(train_ds, config.model.members_only_jaccard);
  result.params = ModelParams::init(train_ds.num_users, train_ds.num_items,
                                    train_ds.num_groups, config.model, config.seed);

  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  AdamOptimizer optimizer(result.params.trainable(), adam);

  Rng shuffle_rng = Rng(config.seed).fork(10);
  Rng negative_rng = Rng(config.seed).fork(11);
  Rng dropout_rng = Rng(config.seed).fork(12);

  std::vector<std::pair<EntityKind, std::pair<std::size_t, std::size_t>>> positives;
  for (const auto& [u, i] : train_ds.user_item) {
    positives.push_back({EntityKind::user, {u, i}});
  }
  for (const auto& [g, i] : train_ds.group_item) {
    positives.push_back({EntityKind::group, {g, i}});
  }

  std::vector<TestCase> group_cases;
  for (const TestCase& tc : result.split.test_cases) {
    if (tc.kind == EntityKind::group) group_cases.push_back(tc);
  }

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(positives);

    EpochLog log;
    log.epoch = epoch;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < positives.size(); begin += config.batch_size) {
      const std::size_t end = std::min(begin + config.batch_size, positives.size());
      std::vector<BatchEntry> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        BatchEntry entry;
        entry.kind = positives[i].first;
        entry.entity = positives[i].second.first;
        entry.positive = positives[i].second.second;
        entry.negatives = sample_negatives(train_ds, entry.kind, entry.entity,
                                           config.negatives, negative_rng);
        batch.push_back(std::move(entry));
      }

      Tape tape;
      ForwardOptions options;
      options.training = true;
      options.dropout_rate = config.dropout;
      options.dropout_rng = &dropout_rng;
      TrainStep step = build_loss(tape, result.params, result.graphs, batch, config,
                                  options);
      const double loss_user = tape.value(step.loss.user).item();
      const double loss_group = tape.value(step.loss.group).item();
      const double loss_ssl = tape.value(step.loss.ssl).item();
      const double loss_total = tape.value(step.loss.total).item();
      if (!std::isfinite(loss_total)) {
        throw NonFiniteLossError(
            "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
            std::to_string(steps) + " (user=" + std::to_string(loss_user) +
            ", group=" + std::to_string(loss_group) +
            ", ssl=" + std::to_string(loss_ssl) + ")");
      }

      result.params.zero_grads();
      tape.backward(step.loss.total);
      optimizer.step();

      log.loss_user += loss_user;
      log.loss_group += loss_group;
      log.loss_ssl += loss_ssl;
      log.loss_total += loss_total;
      steps += 1;
    }
    if (steps > 0) {
      log.loss_user /= static_cast<double>(steps);
      log.loss_group /= static_cast<double>(steps);
      log.loss_ssl /= static_cast<double>(steps);
      log.loss_total /= static_cast<double>(steps);
    }

    const bool eval_now = config.eval_every > 0 &&
                          (epoch % config.eval_every == 0 || epoch == config.epochs);
    if (eval_now && !group_cases.empty()) {
      Representations reprs = compute_representations(result.params, result.graphs);
      auto ranked = rank_test_cases(reprs, group_cases, train_ds);
      log.has_val = true;
      log.val_hr5 = ranking_metrics(ranked, 5).hr;
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                started)
                      .count();
    result.log.push_back(log);
  }
  return result;
}

}  // namespace disrec
