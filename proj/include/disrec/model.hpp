#pragma once

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "disrec/graphs.hpp"
#include "disrec/tape.hpp"

namespace disrec {

enum class Variant { full, no_social, no_pref, no_ssl };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_social: return "no-social";
    case Variant::no_pref: return "no-pref";
    case Variant::no_ssl: return "no-ssl";
  }
  return "full";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no-social") return Variant::no_social;
  if (s == "no-pref") return Variant::no_pref;
  if (s == "no-ssl") return Variant::no_ssl;
  throw ValidationError("unknown variant: " + s);
}

struct ModelConfig {
  std::size_t embed_dim = 64;  // d; user/item halves are d, fused width is 2d
  std::size_t layers = 3;      // L
  Variant variant = Variant::full;
  bool scalar_gate = false;          // per-group scalar gate instead of a 2d vector
  bool members_only_jaccard = false; // co-occurrence overlap over members only

  void validate() const {
    require(embed_dim >= 1, "ModelConfig: embed_dim must be positive");
    require(layers >= 1, "ModelConfig: layers must be at least 1");
  }
};

// Every learnable tensor of the model. Embedding tables are stored row-major
// with one entity per row; weight matrices act on row vectors from the right.
struct ModelParams {
  std::size_t num_users = 0, num_items = 0, num_groups = 0;
  ModelConfig config;

  Parameter user_pref, user_soc;  // [M x d]
  Parameter item_pref, item_soc;  // [N x d]
  Parameter group_embed;          // [K x 2d]
  std::vector<Parameter> hyper_weights;  // L of [d x d]
  Parameter social_w;   // [d x d]
  Parameter social_h;   // [d]
  Parameter member_w;   // [2d x 2d]
  Parameter member_h;   // [2d]
  Parameter gate_member_w, gate_group_w;  // [2d x 2d]
  Parameter gate_bias;  // [2d]
  Parameter ssl_bilinear;  // [2d x 2d]

  static ModelParams init(std::size_t users, std::size_t items, std::size_t groups,
                          const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams p;
    p.num_users = users;
    p.num_items = items;
    p.num_groups = groups;
    p.config = config;
    const std::size_t d = config.embed_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    Rng rng = Rng(seed).fork(0);
    auto uniform = [&](const std::string& name, std::vector<std::size_t> shape) {
      Tensor t = Tensor::zeros(std::move(shape));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
      return Parameter(name, std::move(t));
    };
    p.user_pref = uniform("user_pref", {users, d});
    p.user_soc = uniform("user_soc", {users, d});
    p.item_pref = uniform("item_pref", {items, d});
    p.item_soc = uniform("item_soc", {items, d});
    p.group_embed = uniform("group_embed", {groups, 2 * d});
    for (std::size_t l = 0; l < config.layers; ++l) {
      p.hyper_weights.push_back(uniform("hyper_weight_" + std::to_string(l), {d, d}));
    }
    p.social_w = uniform("social_w", {d, d});
    p.social_h = uniform("social_h", {d});
    p.member_w = uniform("member_w", {2 * d, 2 * d});
    p.member_h = uniform("member_h", {2 * d});
    p.gate_member_w = uniform("gate_member_w", {2 * d, 2 * d});
    p.gate_group_w = uniform("gate_group_w", {2 * d, 2 * d});
    p.gate_bias = Parameter("gate_bias", Tensor::zeros({2 * d}));
    p.ssl_bilinear = uniform("ssl_bilinear", {2 * d, 2 * d});

    // Ablations zero and freeze the disabled embedding half.
    if (config.variant == Variant::no_social) {
      p.user_soc.value.fill(0.0);
      p.item_soc.value.fill(0.0);
    } else if (config.variant == Variant::no_pref) {
      p.user_pref.value.fill(0.0);
      p.item_pref.value.fill(0.0);
    }
    return p;
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out{&user_pref, &user_soc, &item_pref, &item_soc,
                                &group_embed};
    for (auto& h : hyper_weights) out.push_back(&h);
    for (Parameter* p : {&social_w, &social_h, &member_w, &member_h, &gate_member_w,
                         &gate_group_w, &gate_bias, &ssl_bilinear}) {
      out.push_back(p);
    }
    return out;
  }

  // Parameters the optimizer updates; ablated halves stay frozen.
  std::vector<Parameter*> trainable() {
    std::vector<Parameter*> out;
    for (Parameter* p : all()) {
      if (config.variant == Variant::no_social) {
        if (p == &user_soc || p == &item_soc || p == &social_w || p == &social_h) continue;
        bool is_hyper = false;
        for (auto& h : hyper_weights) {
          if (p == &h) is_hyper = true;
        }
        if (is_hyper) continue;
      }
      if (config.variant == Variant::no_pref && (p == &user_pref || p == &item_pref)) {
        continue;
      }
      out.push_back(p);
    }
    return out;
  }

  void zero_grads() {
    for (Parameter* p : all()) p->zero_grad();
  }
};

// Dropout applied to each propagation layer's output while training.
struct DropoutCtx {
  double rate = 0.0;
  Rng* rng = nullptr;

  bool active() const { return rate > 0.0 && rng != nullptr; }

  Tensor mask(const std::vector<std::size_t>& shape) const {
    Tensor m = Tensor::zeros(shape);
    const double keep = 1.0 - rate;
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
    }
    return m;
  }
};

inline Var apply_dropout(Tape& tape, Var x, const DropoutCtx* dropout) {
  if (!dropout || !dropout->active()) return x;
  return tape.mul(x, tape.constant(dropout->mask(tape.value(x).shape())));
}

// Light graph convolution: X^{(l+1)} = A_norm X^{(l)}, averaged over layers
// 0..L so that isolated nodes keep X0/(L+1).
inline Var propagate_preference(Tape& tape, Var x0, const NormalizedAdjacency& adj,
                                std::size_t layers, const DropoutCtx* dropout = nullptr) {
  require(tape.value(x0).rows() == adj.node_count(),
          "propagate_preference: row count mismatch");
  Var acc = x0;
  Var cur = x0;
  for (std::size_t l = 0; l < layers; ++l) {
    cur = apply_dropout(tape, tape.spmm(adj.matrix, cur), dropout);
    acc = tape.add(acc, cur);
  }
  return tape.scale(acc, 1.0 / static_cast<double>(layers + 1));
}

// Weighted attention over each user's social neighbors; users without
// neighbors are left unchanged.
inline Var social_attention(Tape& tape, Var users,
                            const std::vector<std::vector<std::size_t>>& neighbors,
                            Var w1, Var h1,
                            std::vector<std::vector<double>>* alpha_out = nullptr) {
  const std::size_t d = tape.value(users).cols();
  require(tape.value(users).rows() == neighbors.size(),
          "social_attention: neighbor list count mismatch");
  Var projected = tape.matmul(users, w1);
  Var logits = tape.reshape(tape.matmul(projected, tape.reshape(h1, {d, 1})),
                            {neighbors.size()});
  Var contribution = tape.segment_attention(logits, projected, neighbors, alpha_out);
  return tape.add(users, contribution);
}

// Hypergraph convolution X := D^{-1} H W B^{-1} H^T X Psi_l followed by
// social attention on the user rows, averaged over layers 0..L.
inline Var propagate_social_hypergraph(
    Tape& tape, Var x0, const SocialHypergraph& hg, std::span<const Var> psi, Var w1,
    Var h1, std::size_t layers,
    std::vector<std::vector<std::vector<double>>>* alpha_layers = nullptr,
    const DropoutCtx* dropout = nullptr) {
  require(psi.size() >= layers, "propagate_social_hypergraph: missing layer weights");
  require(tape.value(x0).rows() == hg.node_count(),
          "propagate_social_hypergraph: row count mismatch");
  const std::size_t m = hg.num_users;
  const std::size_t n = hg.node_count();
  Var acc = x0;
  Var cur = x0;
  for (std::size_t l = 0; l < layers; ++l) {
    Var mixed = tape.matmul(tape.spmm(hg.scatter, tape.spmm(hg.gather, cur)), psi[l]);
    Var user_rows = tape.slice_rows(mixed, 0, m);
    Var item_rows = tape.slice_rows(mixed, m, n);
    std::vector<std::vector<double>> alpha;
    user_rows = social_attention(tape, user_rows, hg.neighbors, w1, h1,
                                 alpha_layers ? &alpha : nullptr);
    if (alpha_layers) alpha_layers->push_back(std::move(alpha));
    cur = apply_dropout(tape, tape.concat_rows(user_rows, item_rows), dropout);
    acc = tape.add(acc, cur);
  }
  return tape.scale(acc, 1.0 / static_cast<double>(layers + 1));
}

// Attention aggregation of member representations into per-group vectors.
// The returned scores/projected vars allow recomputing reduced aggregates
// (for the self-supervised views) on the same tape.
struct MemberAggregation {
  Var groups;     // [K x 2d]
  Var scores;     // [M]
  Var projected;  // [M x 2d]
  std::vector<std::vector<double>> weights;  // beta per group
};

inline MemberAggregation aggregate_user_level(
    Tape& tape, Var users, const std::vector<std::vector<std::size_t>>& members, Var w2,
    Var h2) {
  for (const auto& m : members) {
    require(!m.empty(), "aggregate_user_level: empty group");
  }
  const std::size_t width = tape.value(users).cols();
  MemberAggregation out;
  out.projected = tape.matmul(users, w2);
  out.scores = tape.reshape(tape.matmul(out.projected, tape.reshape(h2, {width, 1})),
                            {tape.value(users).rows()});
  out.groups = tape.segment_attention(out.scores, out.projected, members, &out.weights);
  return out;
}

inline Var propagate_cooccurrence(Tape& tape, Var g0, const CooccurrenceGraph& cg,
                                  std::size_t layers,
                                  const DropoutCtx* dropout = nullptr) {
  require(tape.value(g0).rows() == cg.num_groups,
          "propagate_cooccurrence: row count mismatch");
  Var acc = g0;
  Var cur = g0;
  for (std::size_t l = 0; l < layers; ++l) {
    cur = apply_dropout(tape, tape.spmm(cg.normalized, cur), dropout);
    acc = tape.add(acc, cur);
  }
  return tape.scale(acc, 1.0 / static_cast<double>(layers + 1));
}

// gamma = sigmoid(Gm W^m + Gt W^t + b), fused = gamma . Gm + (1-gamma) . Gt.
// With scalar_gate the pre-activation row is averaged into one logit per
// group, so gamma is a [K] vector broadcast across the row.
struct GateFusion {
  Var fused;  // [K x 2d]
  Var gate;   // [K x 2d], or [K] with scalar_gate
};

inline GateFusion gate_fuse(Tape& tape, Var gm, Var gt, Var wm, Var wt, Var bias,
                            bool scalar_gate = false) {
  require(tape.value(gm).same_shape(tape.value(gt)), "gate_fuse: shape mismatch");
  Var pre = tape.add_rowvec(tape.add(tape.matmul(gm, wm), tape.matmul(gt, wt)), bias);
  GateFusion out;
  if (scalar_gate) {
    const std::size_t width = tape.value(pre).cols();
    const std::size_t k = tape.value(pre).rows();
    Tensor avg = Tensor::full({width, 1}, 1.0 / static_cast<double>(width));
    Var logit = tape.reshape(tape.matmul(pre, tape.constant(avg)), {k});
    out.gate = tape.sigmoid(logit);
    Var inverse = tape.affine(out.gate, -1.0, 1.0);
    out.fused = tape.add(tape.scale_rows(gm, out.gate), tape.scale_rows(gt, inverse));
  } else {
    out.gate = tape.sigmoid(pre);
    Var inverse = tape.affine(out.gate, -1.0, 1.0);
    out.fused = tape.add(tape.mul(out.gate, gm), tape.mul(inverse, gt));
  }
  return out;
}

// Plain inner-product score between two representation vectors.
inline double score(const Tensor& entity, const Tensor& item) {
  require(entity.size() == item.size(), "score: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < entity.size(); ++i) s += entity[i] * item[i];
  return s;
}

struct ForwardOptions {
  bool training = false;
  double dropout_rate = 0.0;
  Rng* dropout_rng = nullptr;
};

struct ForwardOutput {
  Var users;          // [M x 2d] concatenated preference/social halves
  Var items;          // [N x 2d]
  Var groups_member;  // [K x 2d] user-level aggregation
  Var groups_level;   // [K x 2d] co-occurrence propagation
  Var groups;         // [K x 2d] gate fusion
  Var gate;           // gamma

  // Handles for the self-supervised views: the member-attention scores and
  // projections plus the bound gate/bilinear parameter vars.
  Var member_scores, member_projected;
  Var gate_member_w, gate_group_w, gate_bias, ssl_bilinear;
  bool scalar_gate = false;

  std::vector<std::vector<double>> member_weights;                // beta per group
  std::vector<std::vector<std::vector<double>>> social_weights;   // alpha per layer
  std::vector<std::vector<double>> gate_values;                   // gamma per group
};

inline ForwardOutput forward(Tape& tape, ModelParams& params, const GraphBundle& graphs,
                             const ForwardOptions& options = {}) {
  const std::size_t m = params.num_users;
  const std::size_t n = params.num_items;
  const std::size_t d = params.config.embed_dim;
  const std::size_t layers = params.config.layers;
  const Variant variant = params.config.variant;

  DropoutCtx dropout;
  DropoutCtx* dropout_ptr = nullptr;
  if (options.training && options.dropout_rate > 0.0) {
    require(options.dropout_rng != nullptr, "forward: dropout requires an rng");
    dropout.rate = options.dropout_rate;
    dropout.rng = options.dropout_rng;
    dropout_ptr = &dropout;
  }

  ForwardOutput out;

  // Preference half.
  Var users_pref, items_pref;
  if (variant == Variant::no_pref) {
    users_pref = tape.constant(Tensor::zeros({m, d}));
    items_pref = tape.constant(Tensor::zeros({n, d}));
  } else {
    Var x0 = tape.concat_rows(tape.param(params.user_pref), tape.param(params.item_pref));
    Var prop = propagate_preference(tape, x0, graphs.preference, layers, dropout_ptr);
    users_pref = tape.slice_rows(prop, 0, m);
    items_pref = tape.slice_rows(prop, m, m + n);
  }

  // Social half.
  Var users_soc, items_soc;
  if (variant == Variant::no_social) {
    users_soc = tape.constant(Tensor::zeros({m, d}));
    items_soc = tape.constant(Tensor::zeros({n, d}));
  } else {
    Var x0 = tape.concat_rows(tape.param(params.user_soc), tape.param(params.item_soc));
    std::vector<Var> psi;
    psi.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) psi.push_back(tape.param(params.hyper_weights[l]));
    Var w1 = tape.param(params.social_w);
    Var h1 = tape.param(params.social_h);
    Var prop = propagate_social_hypergraph(tape, x0, graphs.social, psi, w1, h1, layers,
                                           &out.social_weights, dropout_ptr);
    users_soc = tape.slice_rows(prop, 0, m);
    items_soc = tape.slice_rows(prop, m, m + n);
  }

  out.users = tape.concat_cols(users_pref, users_soc);
  out.items = tape.concat_cols(items_pref, items_soc);

  // User-level group aggregation.
  Var w2 = tape.param(params.member_w);
  Var h2 = tape.param(params.member_h);
  MemberAggregation agg = aggregate_user_level(tape, out.users, graphs.members, w2, h2);
  out.groups_member = agg.groups;
  out.member_scores = agg.scores;
  out.member_projected = agg.projected;
  out.member_weights = std::move(agg.weights);

  // Group-level propagation and gate fusion.
  out.groups_level = propagate_cooccurrence(tape, tape.param(params.group_embed),
                                            graphs.cooccurrence, layers, dropout_ptr);
  out.gate_member_w = tape.param(params.gate_member_w);
  out.gate_group_w = tape.param(params.gate_group_w);
  out.gate_bias = tape.param(params.gate_bias);
  out.scalar_gate = params.config.scalar_gate;
  GateFusion fusion = gate_fuse(tape, out.groups_member, out.groups_level,
                                out.gate_member_w, out.gate_group_w, out.gate_bias,
                                out.scalar_gate);
  out.groups = fusion.fused;
  out.gate = fusion.gate;

  const Tensor& gamma = tape.value(out.gate);
  out.gate_values.resize(params.num_groups);
  if (out.scalar_gate) {
    for (std::size_t g = 0; g < params.num_groups; ++g) out.gate_values[g] = {gamma[g]};
  } else {
    const std::size_t width = gamma.cols();
    for (std::size_t g = 0; g < params.num_groups; ++g) {
      out.gate_values[g].assign(gamma.data() + g * width, gamma.data() + (g + 1) * width);
    }
  }

  out.ssl_bilinear = tape.param(params.ssl_bilinear);
  return out;
}

// Final representations extracted from a forward pass, for ranking.
struct Representations {
  Tensor users;   // [M x 2d]
  Tensor items;   // [N x 2d]
  Tensor groups;  // [K x 2d]
};

inline Representations extract_representations(const Tape& tape, const ForwardOutput& out) {
  return Representations{tape.value(out.users), tape.value(out.items),
                         tape.value(out.groups)};
}

// Runs an evaluation-mode forward pass (no dropout) and keeps only values.
inline Representations compute_representations(ModelParams& params,
                                               const GraphBundle& graphs) {
  Tape tape;
  ForwardOutput out = forward(tape, params, graphs, {});
  return extract_representations(tape, out);
}

// --- checkpoint I/O ---
// Layout: magic, format version, config echo (JSON string), then each
// tensor as name, rank, dims, and raw little-endian float64 data.

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kCheckpointMagic[8] = {'D', 'I', 'S', 'R', 'E', 'C', 'K', '1'};

inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw ValidationError("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, ModelParams& params,
                            const std::string& config_echo) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path.string());
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_u64(out, 1);  // format version
  detail::write_u64(out, config_echo.size());
  out.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
  auto tensors = params.all();
  detail::write_u64(out, tensors.size());
  for (Parameter* p : tensors) {
    detail::write_u64(out, p->name.size());
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::write_u64(out, p->value.rank());
    for (std::size_t dim : p->value.shape()) detail::write_u64(out, dim);
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw ValidationError("checkpoint write failed: " + path.string());
}

// Fills `params` (already shaped from the run config) from a checkpoint,
// validating every tensor name and shape. Returns the embedded config echo.
inline std::string load_checkpoint(const std::filesystem::path& path,
                                   ModelParams& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
    throw ValidationError("checkpoint: bad magic in " + path.string());
  }
  const std::uint64_t version = detail::read_u64(in);
  if (version != 1) throw ValidationError("checkpoint: unsupported version");
  std::string echo(detail::read_u64(in), '\0');
  in.read(echo.data(), static_cast<std::streamsize>(echo.size()));
  const std::uint64_t count = detail::read_u64(in);
  auto tensors = params.all();
  if (count != tensors.size()) {
    throw ValidationError("checkpoint: tensor count mismatch (config declares " +
                          std::to_string(tensors.size()) + ", file has " +
                          std::to_string(count) + ")");
  }
  for (Parameter* p : tensors) {
    std::string name(detail::read_u64(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    if (name != p->name) {
      throw ValidationError("checkpoint: expected tensor '" + p->name + "', found '" +
                            name + "'");
    }
    const std::uint64_t rank = detail::read_u64(in);
    std::vector<std::size_t> shape(rank);
    for (auto& dim : shape) dim = detail::read_u64(in);
    if (shape != p->value.shape()) {
      throw ValidationError("checkpoint: shape mismatch for '" + name + "'");
    }
    in.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!in) throw ValidationError("checkpoint: truncated tensor data");
    if (!p->value.all_finite()) {
      throw ValidationError("checkpoint: non-finite values in '" + name + "'");
    }
  }
  return echo;
}

}  // namespace disrec
