// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Item representation tower: adapted semantic rows, optionally combined with
// ID embeddings. The tower always yields an (N+1) x d table whose row 0 is
// the padding vector, held at exactly zero.

#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "featrec/adapters.hpp"
#include "featrec/autodiff/checkpoint.hpp"
#include "featrec/autodiff/tape.hpp"

namespace featrec {

enum class FusionStrategy { kReplace, kConcat, kAlign };

inline std::string_view to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kReplace: return "replace";
    case FusionStrategy::kConcat: return "concat";
    case FusionStrategy::kAlign: return "align";
  }
  return "?";
}

inline FusionStrategy parse_fusion(std::string_view s) {
  if (s == "replace") return FusionStrategy::kReplace;
  if (s == "concat") return FusionStrategy::kConcat;
  if (s == "align") return FusionStrategy::kAlign;
  fail("unknown fusion strategy '", s, "' (expected replace|concat|align)");
}

inline constexpr double kDefaultAlignWeight = 0.1;

struct FusionSpec {
  FusionStrategy strategy = FusionStrategy::kReplace;
  // Unset means the default (0.1 under align, 0 otherwise).
  std::optional<double> align_weight;

  double lambda() const {
    if (strategy != FusionStrategy::kAlign) return 0.0;
    return align_weight.value_or(kDefaultAlignWeight);
  }

  FusionSpec resolved() const {
    FusionSpec s = *this;
    if (align_weight) {
      if (!(*align_weight >= 0.0) || !std::isfinite(*align_weight))
        fail("fusion: align_weight must be a non-negative number, got ", *align_weight);
      if (strategy != FusionStrategy::kAlign && *align_weight > 0.0)
        fail("fusion: align_weight > 0 is only meaningful with strategy=align (got ",
             to_string(strategy), ")");
    }
    s.align_weight = lambda();
    return s;
  }

  bool needs_id_table() const { return strategy != FusionStrategy::kReplace; }
};

// ---------------------------------------------------------------------------
// ID tables.

inline constexpr std::string_view kIdTableName = "id.table";

struct IdEmbeddingTable {
  std::size_t num_items = 0;
  std::size_t dim = 0;
  std::vector<float> values;  // (N+1) x dim, row 0 zero
  std::string origin = "fresh";
  std::string source_digest;

  static IdEmbeddingTable fresh(std::size_t n, std::size_t d, Rng& rng) {
    IdEmbeddingTable t;
    t.num_items = n;
    t.dim = d;
    t.values.assign((n + 1) * d, 0.0f);
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = d; i < t.values.size(); ++i) t.values[i] = static_cast<float>(normal01(rng) * s);
    return t;
  }

  bool pretrained() const { return origin == "pretrained"; }

  ad::Tensor<float> tensor() const { return ad::Tensor<float>({num_items + 1, dim}, values); }

  // Pretrained tables are loaded from a checkpoint's `id.table` entry.
  static IdEmbeddingTable from_checkpoint(const ad::Checkpoint& ck, std::string digest) {
    const auto& t = ck.at(kIdTableName);
    if (t.rank() != 2 || t.shape[0] < 2) fail("id.table must be [N+1, d], got ", ad::shape_str(t.shape));
    IdEmbeddingTable out;
    out.num_items = t.shape[0] - 1;
    out.dim = t.shape[1];
    out.values = t.data;
    for (std::size_t j = 0; j < out.dim; ++j)
      if (out.values[j] != 0.0f) fail("id.table padding row is not zero");
    out.origin = "pretrained";
    out.source_digest = std::move(digest);
    return out;
  }

  static IdEmbeddingTable load(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return from_checkpoint(ad::Checkpoint::decode(bytes, path.string()), digest_string(bytes));
  }
};

// Sum of squared differences over rows 1..N, divided by N*d.
template <typename T>
ad::Var<T> alignment_loss(ad::Var<T> semantic, ad::Var<T> ids) {
  if (semantic.shape() != ids.shape())
    fail("alignment_loss: shape mismatch ", ad::shape_str(semantic.shape()), " vs ",
         ad::shape_str(ids.shape()));
  auto diff = ad::sub(semantic, ids);
  return ad::mean(ad::mul(diff, diff));
}

// Row-wise [semantic | ids] followed by the trainable 2d -> d projection.
template <typename T>
ad::Var<T> fuse_concat(ad::Var<T> semantic, ad::Var<T> ids, ad::ParameterSet<T>& params) {
  ad::Tape<T>& t = *semantic.tape;
  return ad::add(ad::matmul(ad::concat<T>({semantic, ids}, 1), t.param(params.at("fusion.concat.weight"))),
                 t.param(params.at("fusion.concat.bias")));
}

// ---------------------------------------------------------------------------
// Tower.

template <typename T>
struct TowerOutput {
  ad::Var<T> table;               // [N+1, d]
  std::optional<ad::Var<T>> aux;  // weighted auxiliary loss, if any
};

// Builds item representations from frozen adapter features, or (ID-only
// mode) from a trainable ID table alone.
template <typename T>
class ItemTower {
 public:
  // Semantic tower.
  ItemTower(AdapterPipeline adapter, const ItemEmbeddingTable& table, FusionSpec fusion,
            std::optional<IdEmbeddingTable> ids = std::nullopt)
      : adapter_(std::move(adapter)), fusion_(fusion.resolved()), ids_(std::move(ids)) {
    features_ = to_tensor<T>(adapter_->frozen_features(table));
    num_items_ = table.rows;
    dim_ = adapter_->output_dim();
    if (adapter_->spec().architecture == Architecture::kPcaOnly && dim_ != adapter_->spec().d_pca)
      fail("tower: pca_only output dim mismatch");
    if (fusion_.needs_id_table()) {
      if (!ids_ || !ids_->pretrained())
        fail(fusion_.strategy == FusionStrategy::kAlign ? "alignment requires a pretrained ID checkpoint"
                                                        : "concat fusion requires a pretrained ID checkpoint");
      if (ids_->num_items != num_items_ || ids_->dim != dim_)
        fail("pretrained id.table is ", ids_->num_items + 1, "x", ids_->dim, ", expected ",
             num_items_ + 1, "x", dim_);
    }
  }

  // ID-only tower (used for ID pretraining).
  static ItemTower id_only(std::size_t num_items, std::size_t d) {
    ItemTower t;
    t.num_items_ = num_items;
    t.dim_ = d;
    return t;
  }

  std::size_t num_items() const { return num_items_; }
  std::size_t dim() const { return dim_; }
  bool is_id_only() const { return !adapter_.has_value(); }
  const FusionSpec& fusion() const { return fusion_; }
  const std::optional<AdapterPipeline>& adapter() const { return adapter_; }

  // Registers parameters: adapter head, then fusion, in that order.
  void init(ad::ParameterSet<T>& params, Rng& rng) const {
    if (is_id_only()) {
      auto fresh = IdEmbeddingTable::fresh(num_items_, dim_, rng);
      params.add(std::string(kIdTableName), fresh.tensor().template cast<T>());
      return;
    }
    adapter_->init_head(params, rng);
    switch (fusion_.strategy) {
      case FusionStrategy::kReplace:
        return;
      case FusionStrategy::kConcat:
        params.add(std::string(kIdTableName), ids_->tensor().template cast<T>());
        params.add("fusion.concat.weight", uniform_init<T>({2 * dim_, dim_}, 2 * dim_, rng));
        params.add("fusion.concat.bias", ad::Tensor<T>({dim_}));
        return;
      case FusionStrategy::kAlign:
        params.add(std::string(kIdTableName), ids_->tensor().template cast<T>(), /*trainable=*/false);
        return;
    }
  }

  TowerOutput<T> build(ad::Tape<T>& tape, ad::ParameterSet<T>& params) const {
    if (is_id_only()) return {tape.param(params.at(kIdTableName)), std::nullopt};
    auto semantic = adapter_->forward(tape.constant(features_), params);  // [N, d]
    auto pad = tape.constant(ad::Tensor<T>({1, dim_}));
    std::optional<ad::Var<T>> aux;
    switch (fusion_.strategy) {
      case FusionStrategy::kReplace:
        break;
      case FusionStrategy::kConcat:
        semantic = fuse_concat(semantic, id_rows(tape, params), params);
        break;
      case FusionStrategy::kAlign: {
        const double lambda = fusion_.lambda();
        if (lambda > 0.0)
          aux = ad::scale(alignment_loss(semantic, id_rows(tape, params)), static_cast<T>(lambda));
        break;
      }
    }
    return {ad::concat<T>({pad, semantic}, 0), aux};
  }

  // Zeroes gradient reaching the padding row of a trainable ID table so
  // Adam leaves it at exactly zero.
  void mask_padding_grad(ad::ParameterSet<T>& params) const {
    if (auto* p = params.find(kIdTableName); p && p->trainable)
      std::fill_n(p->grad.data.begin(), dim_, T(0));
  }

  // Frozen stages of the adapter (PCA / PQ) for checkpointing.
  void save_frozen(ad::Checkpoint& ck) const {
    if (adapter_) adapter_->save_frozen(ck);
  }

 private:
  ItemTower() = default;

  ad::Var<T> id_rows(ad::Tape<T>& tape, ad::ParameterSet<T>& params) const {
    std::vector<std::uint32_t> rows(num_items_);
    for (std::size_t i = 0; i < num_items_; ++i) rows[i] = static_cast<std::uint32_t>(i + 1);
    return ad::embedding_lookup(tape.param(params.at(kIdTableName)), std::move(rows), {num_items_});
  }

  std::optional<AdapterPipeline> adapter_;
  FusionSpec fusion_;
  std::optional<IdEmbeddingTable> ids_;
  ad::Tensor<T> features_;
  std::size_t num_items_ = 0;
  std::size_t dim_ = 0;
};

}  // namespace featrec
