// Independent brute-force oracles used by the test suites. Everything here
// is written directly from the math with dense matrices and plain loops, on
// purpose not sharing code with the library implementations it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "disrec/dataset.hpp"
#include "disrec/tensor.hpp"

namespace oracle {

using disrec::InteractionDataset;
using disrec::Tensor;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

// Dense symmetric-normalized user-item operator, nodes = users then items.
inline Tensor preference_operator(const InteractionDataset& ds) {
  const std::size_t n = ds.num_users + ds.num_items;
  std::vector<double> deg(n, 0.0);
  for (const auto& [u, i] : ds.user_item) {
    deg[u] += 1.0;
    deg[ds.num_users + i] += 1.0;
  }
  Tensor op = Tensor::zeros({n, n});
  for (const auto& [u, i] : ds.user_item) {
    const std::size_t it = ds.num_users + i;
    const double w = 1.0 / std::sqrt(deg[u] * deg[it]);
    op.at(u, it) = w;
    op.at(it, u) = w;
  }
  return op;
}

// Dense D^{-1} H W B^{-1} H^T with unit hyperedge weights.
inline Tensor hypergraph_operator(const InteractionDataset& ds) {
  const std::size_t n = ds.num_users + ds.num_items;
  const std::size_t k = ds.num_groups;
  Tensor h = Tensor::zeros({n, k});
  for (std::size_t g = 0; g < k; ++g) {
    for (std::size_t u : ds.members[g]) h.at(u, g) = 1.0;
    for (std::size_t i : ds.group_items[g]) h.at(ds.num_users + i, g) = 1.0;
  }
  std::vector<double> d(n, 0.0), b(k, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t g = 0; g < k; ++g) {
      d[v] += h.at(v, g);
      b[g] += h.at(v, g);
    }
  Tensor op = Tensor::zeros({n, n});
  for (std::size_t v = 0; v < n; ++v) {
    if (d[v] == 0.0) continue;
    for (std::size_t w = 0; w < n; ++w) {
      double s = 0.0;
      for (std::size_t g = 0; g < k; ++g) {
        if (b[g] == 0.0) continue;
        s += h.at(v, g) * h.at(w, g) / b[g];
      }
      op.at(v, w) = s / d[v];
    }
  }
  return op;
}

// Dense normalized Jaccard co-occurrence operator over hyperedges.
inline Tensor cooccurrence_operator(const InteractionDataset& ds,
                                    bool members_only = false) {
  const std::size_t k = ds.num_groups;
  std::vector<std::set<std::size_t>> nodes(k);
  for (std::size_t g = 0; g < k; ++g) {
    nodes[g].insert(ds.members[g].begin(), ds.members[g].end());
    if (!members_only) {
      for (std::size_t i : ds.group_items[g]) nodes[g].insert(ds.num_users + i);
    }
  }
  Tensor a = Tensor::zeros({k, k});
  std::vector<double> deg(k, 0.0);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t q = 0; q < k; ++q) {
      if (p == q) continue;
      std::size_t common = 0;
      for (std::size_t v : nodes[p]) common += nodes[q].count(v);
      if (common == 0) continue;
      const double w = static_cast<double>(common) /
                       static_cast<double>(nodes[p].size() + nodes[q].size() - common);
      a.at(p, q) = w;
      if (q > p) {
        deg[p] += w;
        deg[q] += w;
      }
    }
  Tensor op = Tensor::zeros({k, k});
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t q = 0; q < k; ++q) {
      if (a.at(p, q) == 0.0) continue;
      op.at(p, q) = a.at(p, q) / std::sqrt(deg[p] * deg[q]);
    }
  return op;
}

// Layer-averaged propagation with a dense operator: mean of X^(0..L).
inline Tensor layer_average(const Tensor& op, const Tensor& x0, std::size_t layers) {
  Tensor acc = x0;
  Tensor cur = x0;
  for (std::size_t l = 0; l < layers; ++l) {
    cur = matmul(op, cur);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += cur[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    acc[i] /= static_cast<double>(layers + 1);
  }
  return acc;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

// Full social propagation: hypergraph convolution with per-layer weights,
// then per-user neighbor attention, layer-averaged.
inline Tensor social_propagate(const InteractionDataset& ds, const Tensor& x0,
                               const std::vector<Tensor>& psi, const Tensor& w1,
                               const Tensor& h1, std::size_t layers) {
  const std::size_t m = ds.num_users;
  Tensor op = hypergraph_operator(ds);
  Tensor acc = x0;
  Tensor cur = x0;
  const std::size_t d = x0.cols();
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor mixed = matmul(matmul(op, cur), psi[l]);
    // attention over social neighbors, user rows only
    Tensor projected = Tensor::zeros({m, d});
    std::vector<double> logits(m, 0.0);
    for (std::size_t u = 0; u < m; ++u) {
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < d; ++p) s += mixed.at(u, p) * w1.at(p, j);
        projected.at(u, j) = s;
      }
      for (std::size_t j = 0; j < d; ++j) logits[u] += projected.at(u, j) * h1[j];
    }
    Tensor next = mixed;
    for (std::size_t u = 0; u < m; ++u) {
      const auto& nb = ds.neighbors[u];
      if (nb.empty()) continue;
      std::vector<double> seg(nb.size());
      for (std::size_t j = 0; j < nb.size(); ++j) seg[j] = logits[nb[j]];
      auto alpha = softmax(seg);
      for (std::size_t j = 0; j < nb.size(); ++j)
        for (std::size_t p = 0; p < d; ++p)
          next.at(u, p) += alpha[j] * projected.at(nb[j], p);
    }
    cur = next;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += cur[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    acc[i] /= static_cast<double>(layers + 1);
  }
  return acc;
}

// Naive top-K metrics from a full score matrix: sorts all items per case,
// finds the held-out item, applies the textbook formulas.
struct MetricResult {
  double hr = 0.0;
  double ndcg = 0.0;
};

inline MetricResult naive_hr_ndcg(const std::vector<std::vector<double>>& scores,
                                  const std::vector<std::size_t>& held_out,
                                  std::size_t k) {
  MetricResult out;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    std::vector<std::size_t> order(scores[c].size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[c][a] != scores[c][b]) return scores[c][a] > scores[c][b];
      return a < b;
    });
    std::size_t rank = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (order[pos] == held_out[c]) {
        rank = pos + 1;
        break;
      }
    }
    if (rank >= 1 && rank <= k) {
      out.hr += 1.0;
      out.ndcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
  }
  out.hr /= static_cast<double>(scores.size());
  out.ndcg /= static_cast<double>(scores.size());
  return out;
}

}  // namespace oracle
