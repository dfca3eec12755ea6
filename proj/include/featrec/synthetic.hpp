// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic benchmark with planted structure.
//
// Items belong to C clusters. A user's sequence walks the clusters as a
// Markov chain (mostly "advance to the next cluster" or "stay"), picking
// items within the current cluster by a skewed popularity. Each item's
// token-level embedding imitates an LLM reading a templated prompt:
//
//   * template tokens are shared by every item (the fixed prompt words),
//   * content tokens are the item's latent vector (cluster centroid plus
//     item noise) plus per-token noise,
//   * filler tokens carry a few large random spikes.
//
// Mean pooling recovers the latent vector up to a constant shift; max
// pooling is dominated by template maxima and spikes; the last token is the
// closing template token. A second, EOL-flagged store ends each item with a
// summary slot token close to the latent vector.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include "featrec/catalog.hpp"
#include "featrec/common.hpp"
#include "featrec/embedding_io.hpp"

namespace featrec {

struct SyntheticConfig {
  std::size_t items = 500;
  std::size_t users = 2000;
  std::size_t clusters = 20;
  std::size_t dim = 64;  // H
  std::size_t min_seq = 8;
  std::size_t max_seq = 20;
  double p_advance = 0.6;  // move to the next cluster
  double p_stay = 0.3;     // stay; otherwise jump uniformly
  double item_noise = 0.5;
  double token_noise = 0.3;
  std::size_t template_tokens = 4;
  std::size_t min_content = 3;
  std::size_t max_content = 8;
  std::size_t filler_tokens = 3;
  double spike = 6.0;
  std::uint64_t seed = 7;
};

struct SyntheticData {
  std::vector<CatalogItem> catalog;
  std::vector<Interaction> interactions;  // dense item indices
  std::vector<std::size_t> cluster_of;    // per dense item (1-based index - 1)
  std::vector<std::vector<double>> latent;
  TokenEmbeddingStore tokens{1, false};
  TokenEmbeddingStore eol_tokens{1, true};
};

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.items < cfg.clusters || cfg.clusters == 0) fail("synthetic: need items >= clusters > 0");
  if (cfg.min_seq < 5 || cfg.max_seq < cfg.min_seq) fail("synthetic: need 5 <= min_seq <= max_seq");
  if (cfg.max_seq > cfg.items) fail("synthetic: max_seq exceeds the catalog size");
  const std::size_t h = cfg.dim;
  SyntheticData out;
  Rng rng = make_rng(cfg.seed, "synthetic.items");

  std::vector<std::vector<double>> centroid(cfg.clusters, std::vector<double>(h));
  for (auto& c : centroid)
    for (auto& v : c) v = normal01(rng);
  std::vector<std::vector<float>> templ(cfg.template_tokens, std::vector<float>(h));
  for (auto& t : templ)
    for (auto& v : t) v = static_cast<float>(2.0 * normal01(rng));

  std::vector<std::vector<std::uint32_t>> members(cfg.clusters);
  out.tokens = TokenEmbeddingStore(h, false);
  out.eol_tokens = TokenEmbeddingStore(h, true);
  static constexpr const char* kBrands[] = {"Acme", "Borealis", "Cobalt", "Dune", "Ember"};
  for (std::size_t i = 0; i < cfg.items; ++i) {
    const std::size_t k = i % cfg.clusters;
    out.cluster_of.push_back(k);
    members[k].push_back(static_cast<std::uint32_t>(i + 1));
    std::vector<double> z(h);
    for (std::size_t j = 0; j < h; ++j) z[j] = centroid[k][j] + cfg.item_noise * normal01(rng);
    out.latent.push_back(z);

    CatalogItem item;
    item.id = static_cast<std::int64_t>(1000 + i);
    item.attributes = {{"Title", "Item " + std::to_string(i)},
                       {"Category", "Group " + std::to_string(k)},
                       {"Brand", kBrands[i % 5]}};
    out.catalog.push_back(std::move(item));

    std::vector<float> m;
    auto push_row = [&](const std::vector<float>& r) { m.insert(m.end(), r.begin(), r.end()); };
    auto content = [&] {
      std::vector<float> r(h);
      for (std::size_t j = 0; j < h; ++j) r[j] = static_cast<float>(z[j] + cfg.token_noise * normal01(rng));
      return r;
    };
    auto filler = [&] {
      std::vector<float> r(h);
      for (auto& v : r) v = static_cast<float>(cfg.token_noise * normal01(rng));
      for (int s = 0; s < 3; ++s) r[uniform_index(rng, h)] = static_cast<float>(cfg.spike * (0.5 + uniform01(rng)));
      return r;
    };
    auto noisy_template = [&](std::size_t t) {
      std::vector<float> r = templ[t];
      for (auto& v : r) v += static_cast<float>(0.05 * normal01(rng));
      return r;
    };
    const std::size_t n_content = cfg.min_content + uniform_index(rng, cfg.max_content - cfg.min_content + 1);
    // [template 0..T-2] [content / filler interleaved] [template T-1]
    for (std::size_t t = 0; t + 1 < cfg.template_tokens; ++t) push_row(noisy_template(t));
    std::size_t fill_left = cfg.filler_tokens;
    for (std::size_t c = 0; c < n_content; ++c) {
      push_row(content());
      if (fill_left > 0 && uniform01(rng) < 0.5) {
        push_row(filler());
        --fill_left;
      }
    }
    for (; fill_left > 0; --fill_left) push_row(filler());
    push_row(noisy_template(cfg.template_tokens - 1));
    out.tokens.add(m);
    // EOL variant: same prompt followed by the one-word slot token.
    auto slot = content();
    push_row(slot);
    out.eol_tokens.add(m);
  }

  // Popularity within a cluster: weight 1/(rank+1).
  Rng urng = make_rng(cfg.seed, "synthetic.users");
  auto pick_in = [&](std::size_t k, const std::unordered_set<std::uint32_t>& used) {
    const auto& mem = members[k];
    double total = 0;
    for (std::size_t r = 0; r < mem.size(); ++r)
      if (!used.contains(mem[r])) total += 1.0 / static_cast<double>(r + 1);
    if (total == 0) return std::uint32_t{0};
    double u = uniform01(urng) * total;
    for (std::size_t r = 0; r < mem.size(); ++r) {
      if (used.contains(mem[r])) continue;
      u -= 1.0 / static_cast<double>(r + 1);
      if (u < 0) return mem[r];
    }
    for (auto it = mem.rbegin(); it != mem.rend(); ++it)
      if (!used.contains(*it)) return *it;
    return std::uint32_t{0};
  };
  for (std::size_t u = 0; u < cfg.users; ++u) {
    const std::size_t len = cfg.min_seq + uniform_index(urng, cfg.max_seq - cfg.min_seq + 1);
    std::size_t k = uniform_index(urng, cfg.clusters);
    std::unordered_set<std::uint32_t> used;
    std::int64_t ts = 1'600'000'000 + static_cast<std::int64_t>(uniform_index(urng, 1'000'000));
    while (used.size() < len) {
      std::uint32_t item = pick_in(k, used);
      while (item == 0) {
        k = (k + 1) % cfg.clusters;
        item = pick_in(k, used);
      }
      used.insert(item);
      out.interactions.push_back({static_cast<std::int64_t>(u + 1), item, ts});
      ts += 60 + static_cast<std::int64_t>(uniform_index(urng, 86'400));
      const double r = uniform01(urng);
      if (r < cfg.p_advance) k = (k + 1) % cfg.clusters;
      else if (r >= cfg.p_advance + cfg.p_stay) k = uniform_index(urng, cfg.clusters);
    }
  }
  return out;
}

struct SyntheticPaths {
  std::filesystem::path catalog, interactions, tokens, eol_tokens;
};

// Writes catalog.tsv, interactions.tsv, tokens.rxeb and tokens_eol.rxeb.
inline SyntheticPaths write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SyntheticPaths p{dir / "catalog.tsv", dir / "interactions.tsv", dir / "tokens.rxeb",
                   dir / "tokens_eol.rxeb"};
  std::string cat;
  for (const auto& item : data.catalog) {
    cat += std::to_string(item.id);
    for (const auto& a : item.attributes) cat += "\t" + a.name + "=" + a.value;
    cat += "\n";
  }
  write_file_atomic(p.catalog, cat);
  std::string inter;
  for (const auto& r : data.interactions)
    inter += std::to_string(r.user) + "\t" + std::to_string(data.catalog[r.item - 1].id) + "\t" +
             std::to_string(r.timestamp) + "\n";
  write_file_atomic(p.interactions, inter);
  write_token_embeddings(data.tokens, p.tokens);
  write_token_embeddings(data.eol_tokens, p.eol_tokens);
  return p;
}

}  // namespace featrec
