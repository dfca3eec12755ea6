// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// RXEB embedding files and token-state pooling.
//
// Layout (little-endian):
//   "RXEB" | u32 version=1 | u8 kind | u8 dtype | u8 flags | u8 reserved
//   | u32 count N | u32 dim H | payload
// kind 0 (item-level) payload: N*H f32, row-major, catalog order.
// kind 1 (token-level) payload: N u32 token counts, then each item's T_i*H
// f32 values row-major. flags bit0 marks embeddings produced from
// one-word-limited (EOL) prompts.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "featrec/common.hpp"

namespace featrec {

inline constexpr char kRxebMagic[4] = {'R', 'X', 'E', 'B'};
inline constexpr std::uint32_t kRxebVersion = 1;
inline constexpr std::uint8_t kRxebFlagEol = 0x1;

enum class RxebKind : std::uint8_t { kItem = 0, kToken = 1 };

enum class Pooling { kMean, kMax, kLast, kEol };

inline std::string_view to_string(Pooling p) {
  switch (p) {
    case Pooling::kMean: return "mean";
    case Pooling::kMax: return "max";
    case Pooling::kLast: return "last";
    case Pooling::kEol: return "eol";
  }
  return "?";
}

inline Pooling parse_pooling(std::string_view s) {
  if (s == "mean") return Pooling::kMean;
  if (s == "max") return Pooling::kMax;
  if (s == "last") return Pooling::kLast;
  if (s == "eol") return Pooling::kEol;
  fail("unknown pooling strategy '", s, "' (expected mean|max|last|eol)");
}

// Per-item variable-length (T_i x dim) hidden-state matrices.
class TokenEmbeddingStore {
 public:
  TokenEmbeddingStore() = default;
  TokenEmbeddingStore(std::size_t dim, bool eol) : dim_(dim), eol_(eol) {
    if (dim == 0) fail("token store: dim must be positive");
  }

  void add(std::span<const float> matrix) {
    if (matrix.empty() || matrix.size() % dim_ != 0)
      fail("token store: item ", counts_.size() + 1, " has ", matrix.size(),
           " values, not a positive multiple of dim ", dim_);
    for (float v : matrix)
      if (!std::isfinite(v))
        fail("token store: item ", counts_.size() + 1, " has a non-finite value");
    offsets_.push_back(values_.size());
    counts_.push_back(static_cast<std::uint32_t>(matrix.size() / dim_));
    values_.insert(values_.end(), matrix.begin(), matrix.end());
  }

  std::size_t size() const { return counts_.size(); }
  std::size_t dim() const { return dim_; }
  bool eol() const { return eol_; }
  std::uint32_t tokens(std::size_t i) const { return counts_[i]; }
  std::span<const float> matrix(std::size_t i) const {
    return {values_.data() + offsets_[i], std::size_t{counts_[i]} * dim_};
  }
  const std::vector<std::uint32_t>& counts() const { return counts_; }
  const std::vector<float>& values() const { return values_; }

 private:
  std::size_t dim_ = 0;
  bool eol_ = false;
  std::vector<std::uint32_t> counts_;
  std::vector<std::size_t> offsets_;
  std::vector<float> values_;
};

// Fixed N x dim table of item vectors in catalog order.
struct ItemEmbeddingTable {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;
  bool eol = false;
  // Provenance; not part of the RXEB payload.
  std::string pooling;
  std::string source_digest;

  ItemEmbeddingTable() = default;
  ItemEmbeddingTable(std::size_t n, std::size_t d)
      : rows(n), dim(d), values(n * d, 0.0f) {}

  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {values.data() + i * dim, dim}; }
};

// ---------------------------------------------------------------------------
// Pooling. Each takes a row-major T x dim matrix with T >= 1; sums
// accumulate in double.

namespace detail {
inline std::size_t token_count(std::span<const float> m, std::size_t dim) {
  if (dim == 0 || m.size() < dim || m.size() % dim != 0)
    fail("pooling: matrix of ", m.size(), " values is not T x ", dim, " with T >= 1");
  return m.size() / dim;
}
}  // namespace detail

inline std::vector<float> pool_mean(std::span<const float> m, std::size_t dim) {
  const std::size_t t = detail::token_count(m, dim);
  std::vector<double> acc(dim, 0.0);
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t c = 0; c < dim; ++c) acc[c] += m[r * dim + c];
  std::vector<float> out(dim);
  for (std::size_t c = 0; c < dim; ++c)
    out[c] = static_cast<float>(acc[c] / static_cast<double>(t));
  return out;
}

inline std::vector<float> pool_max(std::span<const float> m, std::size_t dim) {
  const std::size_t t = detail::token_count(m, dim);
  std::vector<float> out(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(dim));
  for (std::size_t r = 1; r < t; ++r)
    for (std::size_t c = 0; c < dim; ++c) out[c] = std::max(out[c], m[r * dim + c]);
  return out;
}

inline std::vector<float> pool_last(std::span<const float> m, std::size_t dim) {
  const std::size_t t = detail::token_count(m, dim);
  const auto last = m.subspan((t - 1) * dim, dim);
  return {last.begin(), last.end()};
}

// The one-word slot is the final prompt token, so this is last-token pooling
// gated on the EOL provenance flag.
inline std::vector<float> pool_eol(std::span<const float> m, std::size_t dim,
                                   bool eol_provenance) {
  if (!eol_provenance) fail("EOL pooling requires EOL-prompt embeddings");
  return pool_last(m, dim);
}

inline std::vector<float> pool(Pooling strategy, std::span<const float> m,
                               std::size_t dim, bool eol_provenance) {
  switch (strategy) {
    case Pooling::kMean: return pool_mean(m, dim);
    case Pooling::kMax: return pool_max(m, dim);
    case Pooling::kLast: return pool_last(m, dim);
    case Pooling::kEol: return pool_eol(m, dim, eol_provenance);
  }
  fail("unreachable pooling strategy");
}

inline ItemEmbeddingTable build_item_table(const TokenEmbeddingStore& store,
                                           Pooling strategy,
                                           std::string source_digest = {}) {
  if (strategy == Pooling::kEol && !store.eol())
    fail("EOL pooling requires EOL-prompt embeddings");
  ItemEmbeddingTable table(store.size(), store.dim());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto v = pool(strategy, store.matrix(i), store.dim(), store.eol());
    for (std::size_t c = 0; c < v.size(); ++c) {
      if (!std::isfinite(v[c])) fail("pooling produced a non-finite value for item row ", i);
      table.row(i)[c] = v[c];
    }
  }
  table.eol = store.eol();
  table.pooling = std::string(to_string(strategy));
  table.source_digest = std::move(source_digest);
  return table;
}

// ---------------------------------------------------------------------------
// Serialization.

namespace detail {

struct RxebHeader {
  RxebKind kind;
  std::uint8_t flags;
  std::uint32_t count;
  std::uint32_t dim;
};

inline void put_rxeb_header(ByteWriter& w, RxebKind kind, std::uint8_t flags,
                            std::size_t count, std::size_t dim) {
  w.put_bytes(kRxebMagic, 4);
  w.put<std::uint32_t>(kRxebVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(kind));
  w.put<std::uint8_t>(0);  // dtype f32
  w.put<std::uint8_t>(flags);
  w.put<std::uint8_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(count));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
}

inline RxebHeader get_rxeb_header(ByteReader& r, RxebKind expected) {
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kRxebMagic, 4) != 0) fail(r.what(), ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kRxebVersion) fail(r.what(), ": unsupported version ", version);
  RxebHeader h;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) fail(r.what(), ": unknown kind ", int(kind));
  h.kind = static_cast<RxebKind>(kind);
  const auto dtype = r.get<std::uint8_t>();
  if (dtype != 0) fail(r.what(), ": unsupported dtype ", int(dtype));
  h.flags = r.get<std::uint8_t>();
  if (r.get<std::uint8_t>() != 0) fail(r.what(), ": reserved header byte is not zero");
  h.count = r.get<std::uint32_t>();
  h.dim = r.get<std::uint32_t>();
  if (h.dim == 0) fail(r.what(), ": dim must be positive");
  if (h.kind != expected)
    fail(r.what(), ": expected ", expected == RxebKind::kItem ? "item" : "token",
         "-level file, got ", h.kind == RxebKind::kItem ? "item" : "token", "-level");
  return h;
}

inline void expect_end(const ByteReader& r) {
  if (r.remaining() != 0)
    fail(r.what(), ": ", r.remaining(), " unexpected trailing bytes after payload");
}

}  // namespace detail

inline std::string encode_item_embeddings(const ItemEmbeddingTable& t) {
  ByteWriter w;
  detail::put_rxeb_header(w, RxebKind::kItem, t.eol ? kRxebFlagEol : 0, t.rows, t.dim);
  w.put_bytes(t.values.data(), t.values.size() * sizeof(float));
  return w.bytes();
}

inline ItemEmbeddingTable decode_item_embeddings(std::string_view bytes,
                                                 std::string what = "rxeb") {
  ByteReader r(bytes, std::move(what));
  const auto h = detail::get_rxeb_header(r, RxebKind::kItem);
  ItemEmbeddingTable t(h.count, h.dim);
  t.eol = h.flags & kRxebFlagEol;
  r.get_bytes(t.values.data(), t.values.size() * sizeof(float));
  detail::expect_end(r);
  for (std::size_t i = 0; i < t.values.size(); ++i)
    if (!std::isfinite(t.values[i]))
      fail(r.what(), ": non-finite value in row ", i / t.dim);
  return t;
}

inline std::string encode_token_embeddings(const TokenEmbeddingStore& s) {
  ByteWriter w;
  detail::put_rxeb_header(w, RxebKind::kToken, s.eol() ? kRxebFlagEol : 0, s.size(), s.dim());
  w.put_bytes(s.counts().data(), s.counts().size() * sizeof(std::uint32_t));
  w.put_bytes(s.values().data(), s.values().size() * sizeof(float));
  return w.bytes();
}

inline TokenEmbeddingStore decode_token_embeddings(std::string_view bytes,
                                                   std::string what = "rxeb") {
  ByteReader r(bytes, std::move(what));
  const auto h = detail::get_rxeb_header(r, RxebKind::kToken);
  std::vector<std::uint32_t> counts(h.count);
  r.get_bytes(counts.data(), counts.size() * sizeof(std::uint32_t));
  std::size_t total = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) fail(r.what(), ": item row ", i, " has zero tokens");
    total += std::size_t{counts[i]} * h.dim;
  }
  r.need(total * sizeof(float));
  TokenEmbeddingStore store(h.dim, h.flags & kRxebFlagEol);
  std::vector<float> buf;
  for (auto c : counts) {
    buf.resize(std::size_t{c} * h.dim);
    r.get_bytes(buf.data(), buf.size() * sizeof(float));
    store.add(buf);
  }
  detail::expect_end(r);
  return store;
}

inline void write_item_embeddings(const ItemEmbeddingTable& t, const std::filesystem::path& path) {
  write_file_atomic(path, encode_item_embeddings(t));
}

inline ItemEmbeddingTable read_item_embeddings(const std::filesystem::path& path) {
  auto t = decode_item_embeddings(read_file_bytes(path), path.string());
  return t;
}

inline void write_token_embeddings(const TokenEmbeddingStore& s, const std::filesystem::path& path) {
  write_file_atomic(path, encode_token_embeddings(s));
}

inline TokenEmbeddingStore read_token_embeddings(const std::filesystem::path& path) {
  return decode_token_embeddings(read_file_bytes(path), path.string());
}

}  // namespace featrec
