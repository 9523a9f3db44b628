#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "disrec/common.hpp"

namespace disrec {

enum class EntityKind { user, group };

inline const char* to_string(EntityKind k) {
  return k == EntityKind::user ? "user" : "group";
}

// One held-out interaction produced by a split.
struct TestCase {
  EntityKind kind;
  std::size_t entity;
  std::size_t item;
};

// Implicit-feedback dataset over M users, N items and K groups: user-item
// and group-item pairs, undirected user-user social edges, and per-group
// member lists. Immutable after finalize()/validate().
struct InteractionDataset {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_groups = 0;
  std::vector<std::pair<std::size_t, std::size_t>> user_item;   // sorted, unique
  std::vector<std::pair<std::size_t, std::size_t>> group_item;  // sorted, unique
  std::vector<std::pair<std::size_t, std::size_t>> social;      // (a < b), sorted, unique
  std::vector<std::vector<std::size_t>> members;                // per group, sorted

  // Derived views, rebuilt by finalize().
  std::vector<std::vector<std::size_t>> user_items;    // per user
  std::vector<std::vector<std::size_t>> group_items;   // per group
  std::vector<std::vector<std::size_t>> neighbors;     // per user, symmetric

  void finalize() {
    auto dedup = [](std::vector<std::pair<std::size_t, std::size_t>>& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    for (auto& e : social) {
      if (e.first > e.second) std::swap(e.first, e.second);
    }
    dedup(user_item);
    dedup(group_item);
    dedup(social);
    for (auto& m : members) {
      std::sort(m.begin(), m.end());
      m.erase(std::unique(m.begin(), m.end()), m.end());
    }
    validate();  // derived views below index by the primary fields
    user_items.assign(num_users, {});
    for (const auto& [u, i] : user_item) user_items[u].push_back(i);
    group_items.assign(num_groups, {});
    for (const auto& [g, i] : group_item) group_items[g].push_back(i);
    neighbors.assign(num_users, {});
    for (const auto& [a, b] : social) {
      neighbors[a].push_back(b);
      neighbors[b].push_back(a);
    }
    for (auto& n : neighbors) std::sort(n.begin(), n.end());
  }

  void validate() const {
    if (members.size() != num_groups) {
      throw ValidationError("dataset: member list count does not match group count");
    }
    for (const auto& [u, i] : user_item) {
      if (u >= num_users || i >= num_items) {
        throw ValidationError("dataset: user-item pair out of range");
      }
    }
    for (const auto& [g, i] : group_item) {
      if (g >= num_groups || i >= num_items) {
        throw ValidationError("dataset: group-item pair out of range");
      }
    }
    for (const auto& [a, b] : social) {
      if (a >= num_users || b >= num_users) {
        throw ValidationError("dataset: social edge out of range");
      }
      if (a == b) throw ValidationError("dataset: social self-loop");
    }
    for (std::size_t g = 0; g < num_groups; ++g) {
      if (members[g].empty()) {
        throw ValidationError("dataset: group " + std::to_string(g) + " has no members");
      }
      for (std::size_t u : members[g]) {
        if (u >= num_users) {
          throw ValidationError("dataset: group " + std::to_string(g) +
                                " references user " + std::to_string(u) +
                                " outside range");
        }
      }
      if (!std::is_sorted(members[g].begin(), members[g].end())) {
        throw ValidationError("dataset: unsorted member list");
      }
    }
  }

  bool user_has_item(std::size_t u, std::size_t i) const {
    const auto& v = user_items[u];
    return std::binary_search(v.begin(), v.end(), i);
  }

  bool group_has_item(std::size_t g, std::size_t i) const {
    const auto& v = group_items[g];
    return std::binary_search(v.begin(), v.end(), i);
  }

  bool operator==(const InteractionDataset& o) const {
    return num_users == o.num_users && num_items == o.num_items &&
           num_groups == o.num_groups && user_item == o.user_item &&
           group_item == o.group_item && social == o.social && members == o.members;
  }
};

namespace detail {

inline bool data_line(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::size_t i = line.find_first_not_of(" \t");
  if (i == std::string::npos) return false;
  return line[i] != '#';
}

inline std::vector<std::size_t> parse_ids(const std::string& line, const std::string& file,
                                          std::size_t line_no) {
  std::vector<std::size_t> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    try {
      std::size_t pos = 0;
      long long v = std::stoll(tok, &pos);
      if (pos != tok.size() || v < 0) throw std::invalid_argument(tok);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ParseError(file + ":" + std::to_string(line_no) + ": malformed token '" +
                       tok + "'");
    }
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> read_pair_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  std::vector<std::vector<std::size_t>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!data_line(line)) continue;
    auto ids = parse_ids(line, path, line_no);
    if (ids.empty()) continue;
    if (ids.size() != 2) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": expected exactly two ids");
    }
    rows.push_back(std::move(ids));
  }
  return rows;
}

}  // namespace detail

// Optional declared sizes; when present, indices are validated against them
// instead of being inferred from the data.
struct DatasetCounts {
  std::optional<std::size_t> users;
  std::optional<std::size_t> items;
  std::optional<std::size_t> groups;
};

inline InteractionDataset load_dataset(const std::string& user_item_path,
                                       const std::string& group_item_path,
                                       const std::string& members_path,
                                       const std::string& social_path,
                                       const DatasetCounts& declared = {}) {
  InteractionDataset ds;
  std::size_t max_user = 0, max_item = 0, max_group = 0;
  bool any_user = false, any_item = false, any_group = false;
  auto see_user = [&](std::size_t u) { max_user = std::max(max_user, u); any_user = true; };
  auto see_item = [&](std::size_t i) { max_item = std::max(max_item, i); any_item = true; };
  auto see_group = [&](std::size_t g) { max_group = std::max(max_group, g); any_group = true; };

  for (const auto& row : detail::read_pair_file(user_item_path)) {
    see_user(row[0]);
    see_item(row[1]);
    ds.user_item.emplace_back(row[0], row[1]);
  }
  for (const auto& row : detail::read_pair_file(group_item_path)) {
    see_group(row[0]);
    see_item(row[1]);
    ds.group_item.emplace_back(row[0], row[1]);
  }
  for (const auto& row : detail::read_pair_file(social_path)) {
    see_user(row[0]);
    see_user(row[1]);
    ds.social.emplace_back(row[0], row[1]);
  }

  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> member_rows;
  {
    std::ifstream in(members_path);
    if (!in) throw ParseError("cannot open file: " + members_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!detail::data_line(line)) continue;
      auto ids = detail::parse_ids(line, members_path, line_no);
      if (ids.empty()) continue;
      if (ids.size() < 2) {
        throw ValidationError(members_path + ":" + std::to_string(line_no) +
                              ": group has an empty member list");
      }
      see_group(ids[0]);
      for (std::size_t j = 1; j < ids.size(); ++j) see_user(ids[j]);
      member_rows.emplace_back(ids[0], std::vector<std::size_t>(ids.begin() + 1, ids.end()));
    }
  }

  ds.num_users = declared.users.value_or(any_user ? max_user + 1 : 0);
  ds.num_items = declared.items.value_or(any_item ? max_item + 1 : 0);
  ds.num_groups = declared.groups.value_or(any_group ? max_group + 1 : 0);

  ds.members.assign(ds.num_groups, {});
  for (auto& [g, users] : member_rows) {
    if (g >= ds.num_groups) {
      throw ValidationError(members_path + ": group id " + std::to_string(g) +
                            " outside declared range");
    }
    auto& m = ds.members[g];
    m.insert(m.end(), users.begin(), users.end());
  }

  ds.finalize();
  ds.validate();
  return ds;
}

// Writes the four interaction files in the format load_dataset reads.
inline void save_dataset(const InteractionDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw ParseError("cannot write file: " + (dir / name).string());
    return out;
  };
  {
    auto out = open("user_item.txt");
    out << "# " << ds.num_users << " users, " << ds.num_items << " items\n";
    for (const auto& [u, i] : ds.user_item) out << u << " " << i << "\n";
  }
  {
    auto out = open("group_item.txt");
    for (const auto& [g, i] : ds.group_item) out << g << " " << i << "\n";
  }
  {
    auto out = open("group_members.txt");
    for (std::size_t g = 0; g < ds.num_groups; ++g) {
      out << g;
      for (std::size_t u : ds.members[g]) out << " " << u;
      out << "\n";
    }
  }
  {
    auto out = open("social.txt");
    for (const auto& [a, b] : ds.social) out << a << " " << b << "\n";
  }
}

// --- splitting ---

struct SplitSpec {
  enum class Strategy { leave_one_out, ratio };
  Strategy strategy = Strategy::leave_one_out;
  double ratio = 0.2;  // only used by the ratio strategy
  std::uint64_t seed = 0;

  void validate() const {
    if (strategy == Strategy::ratio) {
      require(ratio > 0.0 && ratio < 1.0, "SplitSpec: ratio must be in (0,1)");
    }
  }
};

struct SplitResult {
  InteractionDataset train;
  std::vector<TestCase> test_cases;
};

// Holds out interactions per entity. Leave-one-out removes exactly one
// uniformly chosen interaction from every entity with at least two;
// single-interaction entities stay entirely in train.
inline SplitResult split(const InteractionDataset& ds, const SplitSpec& spec) {
  spec.validate();
  ds.validate();
  SplitResult out;
  out.train = ds;
  Rng rng(spec.seed);

  auto hold_out = [&](std::vector<std::vector<std::size_t>>& per_entity, EntityKind kind) {
    std::vector<std::pair<std::size_t, std::size_t>> held;
    for (std::size_t e = 0; e < per_entity.size(); ++e) {
      auto& items = per_entity[e];
      if (items.size() < 2) continue;
      std::size_t n_hold = 1;
      if (spec.strategy == SplitSpec::Strategy::ratio) {
        n_hold = std::min(items.size() - 1,
                          static_cast<std::size_t>(
                              static_cast<double>(items.size()) * spec.ratio));
        if (n_hold == 0) continue;
      }
      for (std::size_t h = 0; h < n_hold; ++h) {
        const std::size_t pick = rng.below(items.size());
        const std::size_t item = items[pick];
        items.erase(items.begin() + static_cast<std::ptrdiff_t>(pick));
        held.emplace_back(e, item);
        out.test_cases.push_back({kind, e, item});
      }
    }
    return held;
  };

  // Work on copies of the per-entity lists, then rebuild the pair sets.
  std::vector<std::vector<std::size_t>> ui = ds.user_items;
  std::vector<std::vector<std::size_t>> gi = ds.group_items;
  hold_out(ui, EntityKind::user);
  hold_out(gi, EntityKind::group);

  out.train.user_item.clear();
  for (std::size_t u = 0; u < ui.size(); ++u) {
    for (std::size_t i : ui[u]) out.train.user_item.emplace_back(u, i);
  }
  out.train.group_item.clear();
  for (std::size_t g = 0; g < gi.size(); ++g) {
    for (std::size_t i : gi[g]) out.train.group_item.emplace_back(g, i);
  }
  out.train.finalize();
  return out;
}

// --- synthetic data with a planted influencer signal ---

struct SyntheticDataset {
  InteractionDataset dataset;
  std::vector<std::size_t> influencer;  // per group
};

// Builds groups whose adopted items come from a designated influencer's
// personal pool, while the remaining members share a disjoint majority pool.
// Every group item is therefore absent from every non-influencer member's
// item set, which is the signal the bias probe must detect.
inline SyntheticDataset generate_synthetic_influencer(std::size_t n_users,
                                                      std::size_t n_items,
                                                      std::size_t n_groups,
                                                      std::uint64_t seed) {
  require(n_users >= 4, "generate_synthetic_influencer: need at least 4 users");
  require(n_items >= 10, "generate_synthetic_influencer: need at least 10 items");
  require(n_groups >= 2, "generate_synthetic_influencer: need at least 2 groups");
  require(n_users >= n_groups + 2,
          "generate_synthetic_influencer: need at least two non-influencer users");

  Rng rng(seed);
  Rng item_rng = rng.fork(1);
  Rng member_rng = rng.fork(2);
  Rng social_rng = rng.fork(3);

  SyntheticDataset out;
  InteractionDataset& ds = out.dataset;
  ds.num_users = n_users;
  ds.num_items = n_items;
  ds.num_groups = n_groups;
  ds.members.assign(n_groups, {});

  std::set<std::pair<std::size_t, std::size_t>> ui, gi, soc;
  auto add_social = [&](std::size_t a, std::size_t b) {
    if (a == b) return;
    soc.emplace(std::min(a, b), std::max(a, b));
  };
  auto sample_distinct = [](Rng& r, std::size_t lo, std::size_t hi, std::size_t k) {
    std::set<std::size_t> s;
    while (s.size() < k) s.insert(lo + r.below(hi - lo));
    return std::vector<std::size_t>(s.begin(), s.end());
  };

  // Items [0, pool_a) belong to influencer pools, the rest to the majority
  // pool. Groups are paired: twin groups draw from the same item window, so
  // a positive held out from one twin usually stays a train positive of the
  // other and every window item keeps several influencer edges.
  const std::size_t pool_b = std::max<std::size_t>(4, n_items / 3);
  const std::size_t pool_a = n_items - pool_b;
  const std::size_t n_pairs = (n_groups + 1) / 2;
  const std::size_t window = std::max<std::size_t>(2, pool_a / n_pairs);
  const std::size_t personal = std::min<std::size_t>(5, window);
  const std::size_t positives = std::max<std::size_t>(2, personal - 1);

  for (std::size_t g = 0; g < n_groups; ++g) {
    // User g leads group g; users [n_groups, n_users) form the majority pool.
    const std::size_t influencer = g;
    out.influencer.push_back(influencer);

    // Personal items from the pair's window; the group adopts most of them.
    const std::size_t window_start = ((g / 2) * pool_a) / n_pairs;
    auto offsets = sample_distinct(item_rng, 0, window, personal);
    std::vector<std::size_t> personal_items;
    for (std::size_t off : offsets) {
      personal_items.push_back((window_start + off) % pool_a);
    }
    for (std::size_t it : personal_items) ui.emplace(influencer, it);
    std::vector<std::size_t> adopted = personal_items;
    item_rng.shuffle(adopted);
    adopted.resize(positives);
    for (std::size_t it : adopted) gi.emplace(g, it);

    // Majority members drawn from the non-influencer range.
    const std::size_t majority_pool = n_users - n_groups;
    const std::size_t want = std::min<std::size_t>(2 + member_rng.below(2), majority_pool);
    auto majority = sample_distinct(member_rng, n_groups, n_users, want);

    std::set<std::size_t> group_members(majority.begin(), majority.end());
    group_members.insert(influencer);
    ds.members[g].assign(group_members.begin(), group_members.end());

    // Shared majority items make the probe's coverage threshold reachable.
    const std::size_t n_shared = std::min<std::size_t>(3, pool_b);
    auto shared = sample_distinct(item_rng, pool_a, n_items, n_shared);
    for (std::size_t u : majority) {
      for (std::size_t it : shared) ui.emplace(u, it);
      const std::size_t extra = 1 + item_rng.below(2);
      for (std::size_t it : sample_distinct(item_rng, pool_a, n_items, extra)) {
        ui.emplace(u, it);
      }
    }

    // The influencer is socially well connected: to every member and a few
    // random users beyond the group.
    for (std::size_t u : majority) add_social(influencer, u);
    for (std::size_t e = 0; e < 3; ++e) add_social(influencer, social_rng.below(n_users));
    if (majority.size() >= 2 && social_rng.below(2) == 0) {
      add_social(majority[0], majority[1]);
    }
  }

  ds.user_item.assign(ui.begin(), ui.end());
  ds.group_item.assign(gi.begin(), gi.end());
  ds.social.assign(soc.begin(), soc.end());
  ds.finalize();
  ds.validate();
  return out;
}

}  // namespace disrec
