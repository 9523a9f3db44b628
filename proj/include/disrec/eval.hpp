#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "disrec/dataset.hpp"
#include "disrec/model.hpp"

namespace disrec {

// Rank position of one held-out item within the full candidate ordering.
struct RankedCase {
  EntityKind kind;
  std::size_t entity;
  std::size_t held_out;
  std::size_t rank = 0;  // 1-based
  std::vector<std::size_t> top_items;
};

// Scores every item for the entity and orders descending, breaking ties by
// ascending item id. Train positives of the entity are excluded unless the
// caller disables exclusion (the probe ranks over truly all items).
inline std::vector<std::size_t> rank_items(const Representations& reprs, EntityKind kind,
                                           std::size_t entity,
                                           const InteractionDataset& train,
                                           bool exclude_train_positives = true) {
  const Tensor& table = kind == EntityKind::user ? reprs.users : reprs.groups;
  require(entity < table.rows(), "rank_items: unknown entity id");
  const std::size_t n_items = reprs.items.rows();
  const std::size_t width = table.cols();
  require(width == reprs.items.cols(), "rank_items: representation width mismatch");

  const double* erow = table.data() + entity * width;
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    if (exclude_train_positives) {
      const bool positive = kind == EntityKind::user ? train.user_has_item(entity, i)
                                                     : train.group_has_item(entity, i);
      if (positive) continue;
    }
    const double* irow = reprs.items.data() + i * width;
    double s = 0.0;
    for (std::size_t c = 0; c < width; ++c) s += erow[c] * irow[c];
    scored.emplace_back(s, i);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::size_t> order;
  order.reserve(scored.size());
  for (const auto& [s, i] : scored) order.push_back(i);
  return order;
}

inline std::vector<RankedCase> rank_test_cases(const Representations& reprs,
                                               const std::vector<TestCase>& cases,
                                               const InteractionDataset& train,
                                               bool exclude_train_positives = true,
                                               std::size_t keep_top = 10) {
  std::vector<RankedCase> out;
  out.reserve(cases.size());
  for (const TestCase& tc : cases) {
    auto order = rank_items(reprs, tc.kind, tc.entity, train, exclude_train_positives);
    RankedCase rc;
    rc.kind = tc.kind;
    rc.entity = tc.entity;
    rc.held_out = tc.item;
    rc.rank = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (order[pos] == tc.item) {
        rc.rank = pos + 1;
        break;
      }
    }
    require(rc.rank >= 1, "rank_test_cases: held-out item not in candidate set");
    rc.top_items.assign(order.begin(),
                        order.begin() + static_cast<std::ptrdiff_t>(
                                            std::min(keep_top, order.size())));
    out.push_back(std::move(rc));
  }
  return out;
}

struct MetricPair {
  double hr = 0.0;
  double ndcg = 0.0;
};

// Per-case values: HR is the top-K indicator, NDCG is 1/log2(rank+1) inside
// the top K and 0 outside.
inline double case_hr(const RankedCase& rc, std::size_t k) {
  return rc.rank <= k ? 1.0 : 0.0;
}

inline double case_ndcg(const RankedCase& rc, std::size_t k) {
  if (rc.rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rc.rank) + 1.0);
}

inline MetricPair ranking_metrics(const std::vector<RankedCase>& results, std::size_t k) {
  require(!results.empty(), "ranking_metrics: empty result list");
  MetricPair out;
  for (const RankedCase& rc : results) {
    out.hr += case_hr(rc, k);
    out.ndcg += case_ndcg(rc, k);
  }
  out.hr /= static_cast<double>(results.size());
  out.ndcg /= static_cast<double>(results.size());
  return out;
}

// Paired two-sided sign-flip permutation test on the mean difference.
// Exact enumeration up to 20 pairs, Monte Carlo with the add-one convention
// beyond that (or when forced). The observed assignment is part of the exact
// enumeration, so p is never zero.
inline double permutation_test(const std::vector<double>& a, const std::vector<double>& b,
                               std::size_t n_permutations = 10000,
                               std::uint64_t seed = 0, bool force_monte_carlo = false) {
  require(!a.empty(), "permutation_test: empty input");
  require(a.size() == b.size(), "permutation_test: length mismatch");
  const std::size_t n = a.size();
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];
  double observed = 0.0;
  for (double d : diff) observed += d;
  observed = std::abs(observed) / static_cast<double>(n);
  const double tolerance = 1e-12 * (1.0 + observed);

  if (n <= 20 && !force_monte_carlo) {
    const std::uint64_t total = 1ull << n;
    std::uint64_t count = 0;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double t = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        t += (mask >> i) & 1u ? -diff[i] : diff[i];
      }
      if (std::abs(t) / static_cast<double>(n) >= observed - tolerance) ++count;
    }
    return static_cast<double>(count) / static_cast<double>(total);
  }

  Rng rng(seed);
  std::size_t count = 0;
  for (std::size_t p = 0; p < n_permutations; ++p) {
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      t += rng.below(2) ? -diff[i] : diff[i];
    }
    if (std::abs(t) / static_cast<double>(n) >= observed - tolerance) ++count;
  }
  return static_cast<double>(1 + count) / static_cast<double>(1 + n_permutations);
}

// --- preference-bias probe ---

struct ProbeEntry {
  std::size_t group;
  std::size_t true_item;
  std::size_t fake_a;
  std::size_t fake_b;
};

struct ProbeSet {
  std::vector<ProbeEntry> entries;
  std::size_t skipped = 0;
  std::vector<std::string> skip_reasons;
};

// For each group test case, picks the two decoy items with the widest member
// coverage in the train user-item data (coverage at least ceil(2|G|/3),
// ties broken by lowest item id). Decoys never coincide with any group
// positive, train or test.
inline ProbeSet build_bias_probe(const InteractionDataset& train,
                                 const std::vector<TestCase>& test_cases) {
  ProbeSet out;
  std::vector<std::set<std::size_t>> test_positives(train.num_groups);
  for (const TestCase& tc : test_cases) {
    if (tc.kind == EntityKind::group) test_positives[tc.entity].insert(tc.item);
  }
  for (const TestCase& tc : test_cases) {
    if (tc.kind != EntityKind::group) continue;
    const std::size_t g = tc.entity;
    const auto& members = train.members[g];
    const std::size_t threshold = (2 * members.size() + 2) / 3;  // ceil(2|G|/3)
    std::vector<std::pair<std::size_t, std::size_t>> candidates;  // (coverage, item)
    for (std::size_t item = 0; item < train.num_items; ++item) {
      if (train.group_has_item(g, item)) continue;
      if (test_positives[g].count(item)) continue;
      std::size_t coverage = 0;
      for (std::size_t u : members) coverage += train.user_has_item(u, item) ? 1 : 0;
      if (coverage >= threshold) candidates.emplace_back(coverage, item);
    }
    if (candidates.size() < 2) {
      out.skipped += 1;
      out.skip_reasons.push_back("group " + std::to_string(g) + " test item " +
                                 std::to_string(tc.item) + ": only " +
                                 std::to_string(candidates.size()) +
                                 " items reach the coverage threshold");
      continue;
    }
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    out.entries.push_back({g, tc.item, candidates[0].second, candidates[1].second});
  }
  return out;
}

struct RankGapRow {
  std::size_t group;
  std::size_t true_item;
  std::size_t fake_item;
  std::size_t rank_true;
  std::size_t rank_fake;
  long long gap;  // rank_fake - rank_true; positive means bias resisted
};

struct RankGapReport {
  std::vector<RankGapRow> rows;
  double mean_gap = 0.0;
  double median_gap = 0.0;
  std::map<long long, std::size_t> histogram;  // bin start (width 50) -> count

  static constexpr long long kBinWidth = 50;
};

// Ranks the probe items with train-positive exclusion disabled (the decoys
// are members' train positives and must stay rankable).
inline RankGapReport compute_rank_gap(const Representations& reprs, const ProbeSet& probe,
                                      const InteractionDataset& train) {
  RankGapReport report;
  for (const ProbeEntry& entry : probe.entries) {
    auto order = rank_items(reprs, EntityKind::group, entry.group, train, false);
    std::size_t rank_true = 0, rank_a = 0, rank_b = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (order[pos] == entry.true_item) rank_true = pos + 1;
      if (order[pos] == entry.fake_a) rank_a = pos + 1;
      if (order[pos] == entry.fake_b) rank_b = pos + 1;
    }
    require(rank_true > 0 && rank_a > 0 && rank_b > 0,
            "compute_rank_gap: probe item missing from ranking");
    for (auto [fake, rank_fake] : {std::pair{entry.fake_a, rank_a},
                                   std::pair{entry.fake_b, rank_b}}) {
      RankGapRow row;
      row.group = entry.group;
      row.true_item = entry.true_item;
      row.fake_item = fake;
      row.rank_true = rank_true;
      row.rank_fake = rank_fake;
      row.gap = static_cast<long long>(rank_fake) - static_cast<long long>(rank_true);
      report.rows.push_back(row);
    }
  }
  if (!report.rows.empty()) {
    std::vector<long long> gaps;
    gaps.reserve(report.rows.size());
    for (const auto& row : report.rows) {
      report.mean_gap += static_cast<double>(row.gap);
      gaps.push_back(row.gap);
      long long bin = row.gap >= 0 ? row.gap / RankGapReport::kBinWidth
                                   : -(((-row.gap) + RankGapReport::kBinWidth - 1) /
                                       RankGapReport::kBinWidth);
      report.histogram[bin * RankGapReport::kBinWidth] += 1;
    }
    report.mean_gap /= static_cast<double>(report.rows.size());
    std::sort(gaps.begin(), gaps.end());
    const std::size_t mid = gaps.size() / 2;
    report.median_gap = gaps.size() % 2 ? static_cast<double>(gaps[mid])
                                        : (static_cast<double>(gaps[mid - 1]) +
                                           static_cast<double>(gaps[mid])) /
                                              2.0;
  }
  return report;
}

}  // namespace disrec
