// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Item catalog and interaction log ingestion, prompt text rendering, and the
// leave-one-out split.
//
// Items are addressed two ways: by the positive `item_id` from the input
// files and by a dense 1-based index in catalog (file) order. Index 0 is the
// padding slot, so index i corresponds to row i-1 of every item table.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "featrec/common.hpp"

namespace featrec {

struct Attribute {
  std::string name;
  std::string value;
};

struct CatalogItem {
  std::int64_t id = 0;
  std::vector<Attribute> attributes;

  const std::string* find(std::string_view field) const {
    for (const auto& a : attributes)
      if (a.name == field) return &a.value;
    return nullptr;
  }
};

enum class TextSource { kSac, kKeyword, kSummary, kExpansion };

inline std::string_view to_string(TextSource s) {
  switch (s) {
    case TextSource::kSac: return "sac";
    case TextSource::kKeyword: return "keyword";
    case TextSource::kSummary: return "summary";
    case TextSource::kExpansion: return "expansion";
  }
  return "?";
}

inline TextSource parse_text_source(std::string_view s) {
  if (s == "sac") return TextSource::kSac;
  if (s == "keyword") return TextSource::kKeyword;
  if (s == "summary") return TextSource::kSummary;
  if (s == "expansion") return TextSource::kExpansion;
  fail("unknown text source '", s, "' (expected sac|keyword|summary|expansion)");
}

// Renders "<F1>: <v1>. <F2>: <v2>. ... <Fk>: <vk>." over the fields of
// `field_order` that the item has with a non-empty value. Two items with
// different values render differently unless a value itself contains ". "
// followed by text that mimics a later "<Field>: " prefix; such collisions
// are accepted.
inline std::string render_sac(const CatalogItem& item,
                              const std::vector<std::string>& field_order) {
  std::string out;
  for (const auto& field : field_order) {
    const std::string* v = item.find(field);
    if (!v || v->empty()) continue;
    if (!out.empty()) out += ' ';
    out += field;
    out += ": ";
    out += *v;
    out += '.';
  }
  if (out.empty())
    fail("item ", item.id, " has no renderable attributes");
  return out;
}

class ItemCatalog {
 public:
  ItemCatalog() = default;

  // Throws on a duplicate id, the reserved id 0, or an item without any
  // non-empty attribute.
  void add(CatalogItem item, std::size_t line = 0) {
    if (item.id <= 0)
      fail("line ", line, ": item id ", item.id,
           " is invalid (0 is the reserved padding id)");
    bool any = false;
    for (const auto& a : item.attributes) any |= !a.value.empty();
    if (!any) fail("line ", line, ": item ", item.id, " has an empty attribute set");
    auto [it, inserted] = index_.emplace(item.id, items_.size() + 1);
    if (!inserted)
      fail("line ", line, ": duplicate item id ", item.id,
           " (first defined on line ", lines_[it->second - 1], ")");
    items_.push_back(std::move(item));
    lines_.push_back(line);
  }

  std::size_t size() const { return items_.size(); }
  const std::vector<CatalogItem>& items() const { return items_; }
  // Dense index is 1-based.
  const CatalogItem& at_index(std::size_t index) const { return items_.at(index - 1); }

  std::optional<std::size_t> index_of(std::int64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Field order defaults to first-seen order across the catalog.
  std::vector<std::string> field_names() const {
    std::vector<std::string> names;
    std::set<std::string> seen;
    for (const auto& item : items_)
      for (const auto& a : item.attributes)
        if (seen.insert(a.name).second) names.push_back(a.name);
    return names;
  }

  std::vector<std::string> render_all(const std::vector<std::string>& field_order) const {
    std::vector<std::string> texts;
    texts.reserve(items_.size());
    for (const auto& item : items_) texts.push_back(render_sac(item, field_order));
    return texts;
  }

 private:
  std::vector<CatalogItem> items_;
  std::vector<std::size_t> lines_;
  std::unordered_map<std::int64_t, std::size_t> index_;
};

namespace detail {

// Splits `field=value` at the first '=' not preceded by a backslash and
// unescapes `\=` in the value.
inline Attribute parse_attribute(std::string_view tok, std::size_t line) {
  std::size_t eq = std::string_view::npos;
  for (std::size_t i = 0; i < tok.size(); ++i) {
    if (tok[i] == '\\' && i + 1 < tok.size() && tok[i + 1] == '=') {
      ++i;
      continue;
    }
    if (tok[i] == '=') {
      eq = i;
      break;
    }
  }
  if (eq == std::string_view::npos || eq == 0)
    fail("line ", line, ": malformed attribute '", tok, "' (expected field=value)");
  Attribute a;
  a.name = std::string(tok.substr(0, eq));
  const auto raw = tok.substr(eq + 1);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == '\\' && i + 1 < raw.size() && raw[i + 1] == '=') {
      a.value += '=';
      ++i;
    } else if (raw[i] == '=') {
      fail("line ", line, ": unescaped '=' in value of field '", a.name, "'");
    } else {
      a.value += raw[i];
    }
  }
  return a;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open ", path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace detail

inline ItemCatalog load_catalog(const std::filesystem::path& path) {
  ItemCatalog catalog;
  const auto lines = detail::read_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::size_t lineno = n + 1;
    if (trim(lines[n]).empty()) continue;
    const auto cols = split(lines[n], '\t');
    CatalogItem item;
    item.id = parse_int(cols[0], "line " + std::to_string(lineno) + " item id");
    for (std::size_t c = 1; c < cols.size(); ++c) {
      if (cols[c].empty()) continue;
      item.attributes.push_back(detail::parse_attribute(cols[c], lineno));
    }
    catalog.add(std::move(item), lineno);
  }
  if (catalog.size() == 0) fail(path.string(), ": catalog is empty");
  return catalog;
}

// Externally produced per-item texts (keyword / summary / expansion), one
// per catalog item, returned in catalog order.
inline std::vector<std::string> load_enhanced_texts(const std::filesystem::path& path,
                                                    TextSource kind,
                                                    const ItemCatalog& catalog) {
  if (kind == TextSource::kSac)
    fail("load_enhanced_texts: 'sac' texts are rendered, not loaded");
  std::vector<std::string> texts(catalog.size());
  std::vector<bool> seen(catalog.size(), false);
  const auto lines = detail::read_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (trim(lines[n]).empty()) continue;
    const auto tab = lines[n].find('\t');
    if (tab == std::string::npos)
      fail(path.string(), " line ", n + 1, ": expected item_id<TAB>text");
    const auto id = parse_int(std::string_view(lines[n]).substr(0, tab),
                              "line " + std::to_string(n + 1) + " item id");
    const auto idx = catalog.index_of(id);
    if (!idx) fail(path.string(), " line ", n + 1, ": unknown item ", id);
    std::string text = lines[n].substr(tab + 1);
    if (trim(text).empty())
      fail(path.string(), " line ", n + 1, ": empty ", to_string(kind), " text for item ", id);
    if (seen[*idx - 1]) fail(path.string(), " line ", n + 1, ": duplicate item ", id);
    seen[*idx - 1] = true;
    texts[*idx - 1] = std::move(text);
  }
  std::string missing;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (seen[i]) continue;
    if (!missing.empty()) missing += ",";
    missing += std::to_string(catalog.items()[i].id);
  }
  if (!missing.empty())
    fail(path.string(), ": missing ", to_string(kind), " texts for items {", missing, "}");
  return texts;
}

// ---------------------------------------------------------------------------

struct UserSequence {
  std::int64_t user_id = 0;
  // Dense 1-based item indices, chronological.
  std::vector<std::uint32_t> items;

  // Leave-one-out: the last item is the test target, the one before it the
  // validation target, everything earlier is the training prefix.
  std::span<const std::uint32_t> train_prefix() const {
    return {items.data(), items.size() - 2};
  }
  std::span<const std::uint32_t> valid_context() const { return train_prefix(); }
  std::uint32_t valid_target() const { return items[items.size() - 2]; }
  std::span<const std::uint32_t> test_context() const {
    return {items.data(), items.size() - 1};
  }
  std::uint32_t test_target() const { return items.back(); }
};

enum class Split { kValid, kTest };

struct InteractionDataset {
  std::size_t num_items = 0;
  std::vector<UserSequence> users;  // ascending user_id
  std::size_t duplicates_dropped = 0;
  std::size_t users_dropped = 0;

  std::span<const std::uint32_t> context(const UserSequence& u, Split s) const {
    return s == Split::kValid ? u.valid_context() : u.test_context();
  }
  std::uint32_t target(const UserSequence& u, Split s) const {
    return s == Split::kValid ? u.valid_target() : u.test_target();
  }

  std::string digest() const {
    Hasher h;
    const std::uint64_t n = num_items;
    h.update(&n, sizeof n);
    for (const auto& u : users) {
      h.update(&u.user_id, sizeof u.user_id);
      const std::uint64_t len = u.items.size();
      h.update(&len, sizeof len);
      h.update(u.items.data(), u.items.size() * sizeof(std::uint32_t));
    }
    return h.hex64();
  }
};

inline constexpr std::size_t kMinSplitLength = 3;

// Builds sequences from (user, dense item, timestamp) triples given in file
// order. Exact duplicate triples are dropped and counted; ties on timestamp
// keep file order.
struct Interaction {
  std::int64_t user = 0;
  std::uint32_t item = 0;
  std::int64_t timestamp = 0;
};

inline InteractionDataset build_dataset(std::vector<Interaction> rows,
                                        std::size_t num_items,
                                        std::size_t min_length) {
  InteractionDataset ds;
  ds.num_items = num_items;
  std::map<std::int64_t, std::vector<Interaction>> by_user;
  for (auto& r : rows) by_user[r.user].push_back(r);
  const std::size_t keep_from = std::max(min_length, kMinSplitLength);
  for (auto& [user, list] : by_user) {
    std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
      return a.timestamp < b.timestamp;
    });
    UserSequence seq;
    seq.user_id = user;
    std::set<std::pair<std::int64_t, std::uint32_t>> seen;
    for (const auto& r : list) {
      if (!seen.emplace(r.timestamp, r.item).second) {
        ++ds.duplicates_dropped;
        continue;
      }
      seq.items.push_back(r.item);
    }
    if (seq.items.size() < keep_from) {
      ++ds.users_dropped;
      continue;
    }
    ds.users.push_back(std::move(seq));
  }
  return ds;
}

inline InteractionDataset load_interactions(const std::filesystem::path& path,
                                            const ItemCatalog& catalog,
                                            std::size_t min_length = 5) {
  std::vector<Interaction> rows;
  const auto lines = detail::read_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (trim(lines[n]).empty()) continue;
    const auto cols = split(lines[n], '\t');
    const std::string where = path.string() + " line " + std::to_string(n + 1);
    if (cols.size() != 3) fail(where, ": expected user_id<TAB>item_id<TAB>timestamp");
    Interaction r;
    r.user = parse_int(cols[0], where + " user id");
    const auto item_id = parse_int(cols[1], where + " item id");
    r.timestamp = parse_int(cols[2], where + " timestamp");
    const auto idx = catalog.index_of(item_id);
    if (!idx) fail(where, ": item ", item_id, " is not in the catalog");
    r.item = static_cast<std::uint32_t>(*idx);
    rows.push_back(r);
  }
  auto ds = build_dataset(std::move(rows), catalog.size(), min_length);
  if (ds.duplicates_dropped > 0)
    warn(path.string(), ": dropped ", ds.duplicates_dropped, " duplicate interactions");
  return ds;
}

}  // namespace featrec
