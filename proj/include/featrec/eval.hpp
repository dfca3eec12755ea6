// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sampled-candidate ranking evaluation. Each test case ranks the held-out
// target against 100 items the user never interacted with; HR@K and NDCG@K
// are averaged over users, then summarized across seeds.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "featrec/catalog.hpp"
#include "featrec/common.hpp"

namespace featrec {

inline constexpr std::size_t kDefaultNegatives = 100;
inline constexpr std::array<std::uint64_t, 3> kDefaultSeeds = {42, 43, 44};

// `n` distinct dense item indices outside `history`, drawn uniformly without
// replacement by a partial Fisher-Yates shuffle of the eligible items. The
// stream depends only on (seed, user_id).
inline std::vector<std::uint32_t> sample_negatives(std::span<const std::uint32_t> history,
                                                   std::size_t num_items, std::size_t n,
                                                   std::uint64_t seed, std::int64_t user_id) {
  std::vector<bool> seen(num_items + 1, false);
  std::size_t distinct = 0;
  for (auto i : history) {
    if (i == 0 || i > num_items) fail("sample_negatives: item index ", i, " out of range");
    if (!seen[i]) ++distinct;
    seen[i] = true;
  }
  if (num_items < distinct + n)
    fail("sample_negatives: user ", user_id, " has ", distinct, " distinct items and the catalog ",
         num_items, "; need at least ", distinct + n, " items to draw ", n, " negatives");
  std::vector<std::uint32_t> eligible;
  eligible.reserve(num_items - distinct);
  for (std::uint32_t i = 1; i <= num_items; ++i)
    if (!seen[i]) eligible.push_back(i);
  Rng rng = make_rng(seed, "eval.negatives", static_cast<std::uint64_t>(user_id));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + uniform_index(rng, eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(n);
  return eligible;
}

// 0-based rank of scores[0] (the target) among all scores. Ties count
// against the target.
template <typename S>
std::size_t rank_of_target(std::span<const S> scores) {
  if (scores.empty()) fail("rank_of_target: no scores");
  std::size_t r = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] >= scores[0]) ++r;
  return r;
}

inline double hr_at_k(std::size_t r, std::size_t k) { return r < k ? 1.0 : 0.0; }
inline double ndcg_at_k(std::size_t r, std::size_t k) {
  return r < k ? 1.0 / std::log2(static_cast<double>(r) + 2.0) : 0.0;
}

struct Metrics {
  static constexpr std::array<std::string_view, 4> kNames = {"HR@5", "HR@10", "NDCG@5", "NDCG@10"};
  std::array<double, 4> values{};
  std::size_t cases = 0;

  double hr5() const { return values[0]; }
  double hr10() const { return values[1]; }
  double ndcg5() const { return values[2]; }
  double ndcg10() const { return values[3]; }

  static Metrics from_ranks(std::span<const std::size_t> ranks) {
    Metrics m;
    m.cases = ranks.size();
    if (ranks.empty()) return m;
    for (auto r : ranks) {
      m.values[0] += hr_at_k(r, 5);
      m.values[1] += hr_at_k(r, 10);
      m.values[2] += ndcg_at_k(r, 5);
      m.values[3] += ndcg_at_k(r, 10);
    }
    for (auto& v : m.values) v /= static_cast<double>(ranks.size());
    return m;
  }
};

// Scores a batch of users: for each context, one score per candidate.
using BatchScorer = std::function<std::vector<std::vector<float>>(
    const std::vector<std::span<const std::uint32_t>>& contexts,
    const std::vector<std::vector<std::uint32_t>>& candidates)>;

struct EvalResult {
  Metrics metrics;
  std::vector<std::size_t> ranks;  // per user, dataset order
};

// Candidates are [target, negatives...]; the ordering is irrelevant to the
// rank because ties are pessimistic.
inline EvalResult evaluate_split(const InteractionDataset& ds, Split split, const BatchScorer& scorer,
                                 std::uint64_t seed, std::size_t negatives = kDefaultNegatives,
                                 std::size_t batch_size = 256) {
  EvalResult res;
  res.ranks.reserve(ds.users.size());
  for (std::size_t start = 0; start < ds.users.size(); start += batch_size) {
    const std::size_t end = std::min(ds.users.size(), start + batch_size);
    std::vector<std::span<const std::uint32_t>> contexts;
    std::vector<std::vector<std::uint32_t>> candidates;
    for (std::size_t u = start; u < end; ++u) {
      const auto& user = ds.users[u];
      contexts.push_back(ds.context(user, split));
      auto cand = sample_negatives(user.items, ds.num_items, negatives, seed, user.user_id);
      cand.insert(cand.begin(), ds.target(user, split));
      candidates.push_back(std::move(cand));
    }
    const auto scores = scorer(contexts, candidates);
    if (scores.size() != contexts.size()) fail("evaluate: scorer returned ", scores.size(), " rows");
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != candidates[i].size())
        fail("evaluate: scorer returned ", scores[i].size(), " scores for ", candidates[i].size(),
             " candidates");
      res.ranks.push_back(rank_of_target(std::span<const float>(scores[i])));
    }
  }
  res.metrics = Metrics::from_ranks(res.ranks);
  return res;
}

// ---------------------------------------------------------------------------
// Cross-seed report.

struct SeedResult {
  std::uint64_t seed = 0;
  Metrics test;
  double best_valid_ndcg10 = 0;
  std::size_t best_epoch = 0;
  std::string checkpoint_digest;
};

struct MetricsReport {
  std::string label;
  std::string config_digest;
  std::string dataset_digest;
  std::string config_text;  // fully resolved config, enough to replay the run
  std::string negatives_policy = "per-seed";
  std::vector<SeedResult> seeds;

  double mean(std::size_t metric) const {
    if (seeds.empty()) return 0;
    double s = 0;
    for (const auto& r : seeds) s += r.test.values[metric];
    return s / static_cast<double>(seeds.size());
  }
  double population_std(std::size_t metric) const { return std_dev(metric, 0); }
  double sample_std(std::size_t metric) const { return seeds.size() < 2 ? 0 : std_dev(metric, 1); }

  // One JSON object per seed plus one summary object.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& r : seeds) {
      nlohmann::ordered_json j;
      j["record"] = "seed";
      j["label"] = label;
      j["seed"] = r.seed;
      for (std::size_t m = 0; m < 4; ++m) j[std::string(Metrics::kNames[m])] = r.test.values[m];
      j["cases"] = r.test.cases;
      j["best_valid_ndcg10"] = r.best_valid_ndcg10;
      j["best_epoch"] = r.best_epoch;
      j["checkpoint_digest"] = r.checkpoint_digest;
      out += j.dump() + "\n";
    }
    nlohmann::ordered_json s;
    s["record"] = "summary";
    s["label"] = label;
    for (std::size_t m = 0; m < 4; ++m) {
      const std::string name(Metrics::kNames[m]);
      s[name] = {{"mean", mean(m)}, {"std", population_std(m)}, {"sample_std", sample_std(m)}};
    }
    s["config_digest"] = config_digest;
    s["dataset_digest"] = dataset_digest;
    s["negatives"] = negatives_policy;
    s["config"] = config_text;
    out += s.dump() + "\n";
    return out;
  }

 private:
  double std_dev(std::size_t metric, std::size_t ddof) const {
    if (seeds.size() <= ddof) return 0;
    const double mu = mean(metric);
    double ss = 0;
    for (const auto& r : seeds) ss += (r.test.values[metric] - mu) * (r.test.values[metric] - mu);
    return std::sqrt(ss / static_cast<double>(seeds.size() - ddof));
  }
};

// Aligned plain-text table: rows are metrics, columns are configurations.
// Per row, the best mean is wrapped as **x** and the second best as _x_.
inline std::string format_table(const std::vector<MetricsReport>& reports) {
  std::vector<std::vector<std::string>> cells(5, std::vector<std::string>(reports.size() + 1));
  cells[0][0] = "metric";
  for (std::size_t c = 0; c < reports.size(); ++c) cells[0][c + 1] = reports[c].label;
  for (std::size_t m = 0; m < 4; ++m) {
    cells[m + 1][0] = std::string(Metrics::kNames[m]);
    std::vector<std::size_t> order(reports.size());
    for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return reports[a].mean(m) > reports[b].mean(m);
    });
    for (std::size_t c = 0; c < reports.size(); ++c) {
      std::ostringstream v;
      v << std::fixed << std::setprecision(4) << reports[c].mean(m) << " ± " << std::setprecision(4)
        << reports[c].population_std(m);
      std::string cell = v.str();
      if (reports.size() > 1 && c == order[0]) cell = "**" + cell + "**";
      else if (reports.size() > 2 && c == order[1]) cell = "_" + cell + "_";
      cells[m + 1][c + 1] = cell;
    }
  }
  // "±" is two bytes but one column wide.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> col(reports.size() + 1, 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) col[c] = std::max(col[c], width(row[c]));
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      out += cells[r][c];
      if (c + 1 < cells[r].size()) out += std::string(col[c] - width(cells[r][c]) + 2, ' ');
    }
    out += "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : col) total += w + 2;
      out += std::string(total - 2, '-') + "\n";
    }
  }
  return out;
}

}  // namespace featrec
