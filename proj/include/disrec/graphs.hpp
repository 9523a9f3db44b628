#pragma once

#include <cmath>
#include <set>
#include <vector>

#include "disrec/dataset.hpp"
#include "disrec/sparse.hpp"

namespace disrec {

// Symmetrically normalized user-item adjacency over M+N nodes (users first,
// then items). Each nonzero is 1/sqrt(deg(u) * deg(i)); isolated nodes keep
// all-zero rows via the deg^{-1/2} := 0 convention.
struct NormalizedAdjacency {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  SparseMatrix matrix;  // (M+N) x (M+N)

  std::size_t node_count() const { return num_users + num_items; }
};

inline NormalizedAdjacency build_preference_adjacency(const InteractionDataset& train) {
  NormalizedAdjacency adj;
  adj.num_users = train.num_users;
  adj.num_items = train.num_items;
  const std::size_t n = adj.node_count();
  std::vector<std::size_t> degree(n, 0);
  for (const auto& [u, i] : train.user_item) {
    degree[u] += 1;
    degree[train.num_users + i] += 1;
  }
  std::vector<SparseMatrix::Triplet> triplets;
  triplets.reserve(2 * train.user_item.size());
  for (const auto& [u, i] : train.user_item) {
    const std::size_t item_node = train.num_users + i;
    const double w = 1.0 / std::sqrt(static_cast<double>(degree[u]) *
                                     static_cast<double>(degree[item_node]));
    triplets.emplace_back(u, item_node, w);
    triplets.emplace_back(item_node, u, w);
  }
  adj.matrix = SparseMatrix::from_triplets(n, n, std::move(triplets));
  return adj;
}

// Social hypergraph over users and items: one hyperedge per group spanning
// its members and the group's train items, plus the user-user social edges
// as neighbor lists. The propagation operator D^{-1} H W B^{-1} H^T is
// cached as two sparse factors so it can be applied as two spmm calls.
struct SocialHypergraph {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_edges = 0;

  SparseMatrix incidence;              // (M+N) x K
  std::vector<double> edge_weights;    // diagonal of W
  std::vector<double> vertex_degree;   // diagonal of D
  std::vector<double> edge_degree;     // diagonal of B
  std::vector<std::vector<std::size_t>> neighbors;  // per user, symmetric

  SparseMatrix scatter;  // D^{-1} H W B^{-1}, (M+N) x K
  SparseMatrix gather;   // H^T, K x (M+N)

  std::size_t node_count() const { return num_users + num_items; }
};

inline SocialHypergraph build_social_hypergraph(const InteractionDataset& train) {
  SocialHypergraph hg;
  hg.num_users = train.num_users;
  hg.num_items = train.num_items;
  hg.num_edges = train.num_groups;
  hg.neighbors = train.neighbors;
  hg.edge_weights.assign(hg.num_edges, 1.0);

  const std::size_t n = hg.node_count();
  std::vector<SparseMatrix::Triplet> inc;
  hg.edge_degree.assign(hg.num_edges, 0.0);
  hg.vertex_degree.assign(n, 0.0);
  for (std::size_t g = 0; g < train.num_groups; ++g) {
    std::set<std::size_t> nodes(train.members[g].begin(), train.members[g].end());
    for (std::size_t i : train.group_items[g]) nodes.insert(train.num_users + i);
    if (nodes.empty()) {
      throw ValidationError("hypergraph: hyperedge " + std::to_string(g) + " is empty");
    }
    for (std::size_t v : nodes) {
      inc.emplace_back(v, g, 1.0);
      hg.vertex_degree[v] += hg.edge_weights[g];
      hg.edge_degree[g] += 1.0;
    }
  }
  hg.incidence = SparseMatrix::from_triplets(n, hg.num_edges, std::move(inc));
  hg.gather = hg.incidence.transposed();

  std::vector<SparseMatrix::Triplet> sc;
  for (std::size_t v = 0; v < n; ++v) {
    if (hg.vertex_degree[v] == 0.0) continue;
    for (std::size_t k = hg.incidence.row_offsets[v]; k < hg.incidence.row_offsets[v + 1];
         ++k) {
      const std::size_t e = hg.incidence.col_indices[k];
      sc.emplace_back(v, e,
                      hg.edge_weights[e] / (hg.vertex_degree[v] * hg.edge_degree[e]));
    }
  }
  hg.scatter = SparseMatrix::from_triplets(n, hg.num_edges, std::move(sc));
  return hg;
}

// Group co-occurrence graph: hyperedges become nodes, linked when their node
// sets overlap, with Jaccard weights. The normalized operator uses weighted
// degrees and the same zero-row convention for isolated groups.
struct CooccurrenceGraph {
  std::size_t num_groups = 0;
  SparseMatrix adjacency;   // K x K, Jaccard weights, zero diagonal
  SparseMatrix normalized;  // D^{-1/2} A D^{-1/2}
};

inline CooccurrenceGraph build_cooccurrence_graph(const InteractionDataset& train,
                                                  bool members_only = false) {
  CooccurrenceGraph cg;
  cg.num_groups = train.num_groups;
  const std::size_t k = train.num_groups;

  std::vector<std::set<std::size_t>> edge_nodes(k);
  for (std::size_t g = 0; g < k; ++g) {
    edge_nodes[g].insert(train.members[g].begin(), train.members[g].end());
    if (!members_only) {
      for (std::size_t i : train.group_items[g]) {
        edge_nodes[g].insert(train.num_users + i);
      }
    }
  }

  std::vector<SparseMatrix::Triplet> triplets;
  std::vector<double> degree(k, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t q = p + 1; q < k; ++q) {
      std::size_t common = 0;
      for (std::size_t v : edge_nodes[p]) common += edge_nodes[q].count(v);
      if (common == 0) continue;
      const std::size_t unite = edge_nodes[p].size() + edge_nodes[q].size() - common;
      const double w = static_cast<double>(common) / static_cast<double>(unite);
      triplets.emplace_back(p, q, w);
      triplets.emplace_back(q, p, w);
      degree[p] += w;
      degree[q] += w;
    }
  }
  cg.adjacency = SparseMatrix::from_triplets(k, k, triplets);

  for (auto& [r, c, v] : triplets) {
    v /= std::sqrt(degree[r] * degree[c]);
  }
  cg.normalized = SparseMatrix::from_triplets(k, k, std::move(triplets));
  return cg;
}

// Everything the forward pass needs, built from the train split only.
struct GraphBundle {
  NormalizedAdjacency preference;
  SocialHypergraph social;
  CooccurrenceGraph cooccurrence;
  std::vector<std::vector<std::size_t>> members;  // per group, from train
};

inline GraphBundle build_graphs(const InteractionDataset& train,
                                bool members_only_jaccard = false) {
  GraphBundle b;
  b.preference = build_preference_adjacency(train);
  b.social = build_social_hypergraph(train);
  b.cooccurrence = build_cooccurrence_graph(train, members_only_jaccard);
  b.members = train.members;
  return b;
}

}  // namespace disrec
