// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// SASRec: self-attentive next-item model over the tower's item table.
//
// Sequences are left-padded with id 0 and trimmed per batch to the longest
// row, so the last column is always the most recent item. Positions index
// the last rows of the position table, making trimming invisible to real
// positions. Blocks are pre-layer-norm residual units (attention, then a
// two-layer pointwise feed-forward); a final layer norm closes the stack.

#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "featrec/autodiff/adam.hpp"
#include "featrec/autodiff/checkpoint.hpp"
#include "featrec/autodiff/tape.hpp"
#include "featrec/catalog.hpp"
#include "featrec/eval.hpp"
#include "featrec/fusion.hpp"

namespace featrec {

enum class SeqLoss { kBce, kSoftmax };

inline std::string_view to_string(SeqLoss l) { return l == SeqLoss::kBce ? "bce" : "softmax"; }
inline SeqLoss parse_seq_loss(std::string_view s) {
  if (s == "bce") return SeqLoss::kBce;
  if (s == "softmax") return SeqLoss::kSoftmax;
  fail("unknown loss '", s, "' (expected bce|softmax)");
}

struct SasrecConfig {
  std::size_t max_len = 50;
  std::size_t blocks = 2;
  std::size_t heads = 1;
  double dropout = 0.2;
  double lr = 1e-3;
  std::size_t batch_size = 128;
  std::size_t epochs = 200;
  std::size_t patience = 10;
  SeqLoss loss = SeqLoss::kBce;

  void validate(std::size_t d) const {
    if (max_len < 2) fail("sasrec: max_len must be >= 2, got ", max_len);
    if (heads == 0 || d % heads != 0) fail("sasrec: d=", d, " is not divisible by heads=", heads);
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("sasrec: dropout must be in [0,1), got ", dropout);
    if (!(lr > 0.0)) fail("sasrec: lr must be positive");
    if (batch_size == 0) fail("sasrec: batch_size must be positive");
    if (epochs == 0) fail("sasrec: epochs must be positive");
  }
};

// Closed form: positions L*d, per block 6d^2 + 10d (four attention
// projections, two feed-forward layers, two layer norms), final norm 2d.
inline std::size_t sasrec_param_count(const SasrecConfig& cfg, std::size_t d) {
  return cfg.max_len * d + cfg.blocks * (6 * d * d + 10 * d) + 2 * d;
}

template <typename T>
void init_sasrec(const SasrecConfig& cfg, std::size_t d, ad::ParameterSet<T>& params, Rng& rng) {
  cfg.validate(d);
  auto ones = [&] { return ad::Tensor<T>({d}, std::vector<T>(d, T(1))); };
  ad::Tensor<T> pos({cfg.max_len, d});
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& v : pos.data) v = static_cast<T>(normal01(rng) * s);
  params.add("sasrec.pos", std::move(pos));
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "sasrec.block." + std::to_string(b) + ".";
    params.add(p + "ln1.gain", ones());
    params.add(p + "ln1.bias", ad::Tensor<T>({d}));
    for (const char* m : {"q", "k", "v", "o"}) {
      params.add(p + "attn." + m + ".weight", uniform_init<T>({d, d}, d, rng));
      params.add(p + "attn." + m + ".bias", ad::Tensor<T>({d}));
    }
    params.add(p + "ln2.gain", ones());
    params.add(p + "ln2.bias", ad::Tensor<T>({d}));
    params.add(p + "ffn.0.weight", uniform_init<T>({d, d}, d, rng));
    params.add(p + "ffn.0.bias", ad::Tensor<T>({d}));
    params.add(p + "ffn.1.weight", uniform_init<T>({d, d}, d, rng));
    params.add(p + "ffn.1.bias", ad::Tensor<T>({d}));
  }
  params.add("sasrec.final_ln.gain", ones());
  params.add("sasrec.final_ln.bias", ad::Tensor<T>({d}));
}

// B rows of L left-padded ids.
struct SeqBatch {
  std::size_t rows = 0;
  std::size_t len = 0;
  std::vector<std::uint32_t> ids;

  std::uint32_t at(std::size_t b, std::size_t t) const { return ids[b * len + t]; }
};

// Keeps the last max_len items of each sequence and pads on the left to the
// longest kept row.
inline SeqBatch make_batch(const std::vector<std::span<const std::uint32_t>>& seqs, std::size_t max_len) {
  SeqBatch batch;
  batch.rows = seqs.size();
  for (const auto& s : seqs) batch.len = std::max(batch.len, std::min(s.size(), max_len));
  batch.len = std::max<std::size_t>(batch.len, 1);
  batch.ids.assign(batch.rows * batch.len, 0);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const std::size_t keep = std::min(seqs[b].size(), max_len);
    std::copy(seqs[b].end() - static_cast<std::ptrdiff_t>(keep), seqs[b].end(),
              batch.ids.begin() + static_cast<std::ptrdiff_t>(b * batch.len + batch.len - keep));
  }
  return batch;
}

namespace detail {

template <typename T>
ad::Var<T> dense(ad::Var<T> x, ad::ParameterSet<T>& params, const std::string& name) {
  ad::Tape<T>& t = *x.tape;
  return ad::add(ad::matmul(x, t.param(params.at(name + ".weight"))), t.param(params.at(name + ".bias")));
}

template <typename T>
ad::Var<T> maybe_dropout(ad::Var<T> x, double rate, Rng* rng) {
  return rng ? ad::dropout(x, rate, *rng) : x;
}

}  // namespace detail

// Hidden states [B, L, d]. `dropout_rng` null means inference (no dropout).
// Query t attends to keys <= t that are real items; the diagonal is always
// kept so padded queries stay finite (their outputs are never used).
template <typename T>
ad::Var<T> sasrec_forward(const SasrecConfig& cfg, ad::Var<T> table, const SeqBatch& batch,
                          ad::ParameterSet<T>& params, Rng* dropout_rng) {
  ad::Tape<T>& tape = *table.tape;
  const std::size_t B = batch.rows, L = batch.len, d = table.shape()[1];
  if (L > cfg.max_len) fail("sasrec: batch length ", L, " exceeds max_len ", cfg.max_len);
  const std::size_t heads = cfg.heads, dh = d / heads;

  auto x = ad::embedding_lookup(table, batch.ids, {B, L});
  std::vector<std::uint32_t> pos_rows(L);
  for (std::size_t t = 0; t < L; ++t) pos_rows[t] = static_cast<std::uint32_t>(cfg.max_len - L + t);
  x = ad::add(x, ad::embedding_lookup(tape.param(params.at("sasrec.pos")), pos_rows, {L}));
  x = detail::maybe_dropout(x, cfg.dropout, dropout_rng);

  ad::Tensor<T> keep({B, L, d});
  ad::Tensor<T> mask({B, L, L});
  constexpr T kMasked = T(-1e9);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < L; ++i) {
      if (batch.at(b, i) != 0) std::fill_n(keep.data.begin() + (b * L + i) * d, d, T(1));
      for (std::size_t j = 0; j < L; ++j)
        if (j > i || (j != i && batch.at(b, j) == 0)) mask[(b * L + i) * L + j] = kMasked;
    }
  auto keep_v = tape.constant(std::move(keep));
  auto mask_v = tape.constant(std::move(mask));
  x = ad::mul(x, keep_v);
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  for (std::size_t blk = 0; blk < cfg.blocks; ++blk) {
    const std::string p = "sasrec.block." + std::to_string(blk) + ".";
    auto a = ad::layer_norm(x, tape.param(params.at(p + "ln1.gain")), tape.param(params.at(p + "ln1.bias")));
    auto q = detail::dense(a, params, p + "attn.q");
    auto k = detail::dense(a, params, p + "attn.k");
    auto v = detail::dense(a, params, p + "attn.v");
    std::vector<ad::Var<T>> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      auto qh = heads == 1 ? q : ad::slice_last(q, h * dh, dh);
      auto kh = heads == 1 ? k : ad::slice_last(k, h * dh, dh);
      auto vh = heads == 1 ? v : ad::slice_last(v, h * dh, dh);
      auto scores = ad::add(ad::scale(ad::matmul(qh, kh, /*transpose_b=*/true), inv_sqrt), mask_v);
      auto w = detail::maybe_dropout(ad::softmax(scores, -1), cfg.dropout, dropout_rng);
      outs.push_back(ad::matmul(w, vh));
    }
    auto attn = heads == 1 ? outs[0] : ad::concat<T>(outs, -1);
    attn = detail::maybe_dropout(detail::dense(attn, params, p + "attn.o"), cfg.dropout, dropout_rng);
    x = ad::add(x, attn);

    auto f = ad::layer_norm(x, tape.param(params.at(p + "ln2.gain")), tape.param(params.at(p + "ln2.bias")));
    f = ad::relu(detail::dense(f, params, p + "ffn.0"));
    f = detail::maybe_dropout(f, cfg.dropout, dropout_rng);
    f = detail::maybe_dropout(detail::dense(f, params, p + "ffn.1"), cfg.dropout, dropout_rng);
    x = ad::mul(ad::add(x, f), keep_v);
  }
  return ad::layer_norm(x, tape.param(params.at("sasrec.final_ln.gain")),
                        tape.param(params.at("sasrec.final_ln.bias")));
}

// Training targets aligned with a batch: targets[b*L+t] is the next item
// after position t (0 = no target), negatives likewise.
struct SeqTargets {
  std::vector<std::uint32_t> positives;
  std::vector<std::uint32_t> negatives;
};

// Mean over target positions of -[log s(h.e_pos) + log(1 - s(h.e_neg))].
// Returns a constant 0 when no position carries a target.
template <typename T>
ad::Var<T> bce_loss(ad::Var<T> hidden, ad::Var<T> table, const SeqTargets& tg) {
  ad::Tape<T>& tape = *hidden.tape;
  const std::size_t d = hidden.shape().back(), rows = hidden.size() / d;
  if (tg.positives.size() != rows || tg.negatives.size() != rows)
    fail("bce_loss: ", tg.positives.size(), " targets for ", rows, " positions");
  std::vector<std::uint32_t> at, pos, neg;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tg.positives[r] == 0) continue;
    if (tg.negatives[r] == 0 || tg.negatives[r] == tg.positives[r])
      fail("bce_loss: invalid negative at position ", r);
    at.push_back(static_cast<std::uint32_t>(r));
    pos.push_back(tg.positives[r]);
    neg.push_back(tg.negatives[r]);
  }
  if (at.empty()) return tape.constant(ad::Tensor<T>({1}));
  const std::size_t n = at.size();
  auto h = ad::embedding_lookup(ad::reshape(hidden, {rows, d}), std::move(at), {n});
  auto sp = ad::sum_axis(ad::mul(h, ad::embedding_lookup(table, std::move(pos), {n})), -1);
  auto sn = ad::sum_axis(ad::mul(h, ad::embedding_lookup(table, std::move(neg), {n})), -1);
  auto total = ad::add(ad::sum(ad::log_sigmoid(sp)), ad::sum(ad::log_sigmoid(ad::scale(sn, T(-1)))));
  return ad::scale(total, static_cast<T>(-1.0 / static_cast<double>(n)));
}

// Full-catalog cross-entropy over items 1..N (padding column excluded).
template <typename T>
ad::Var<T> softmax_loss(ad::Var<T> hidden, ad::Var<T> table, const SeqTargets& tg) {
  ad::Tape<T>& tape = *hidden.tape;
  const std::size_t d = hidden.shape().back(), rows = hidden.size() / d;
  const std::size_t v = table.shape()[0];
  std::vector<std::uint32_t> at, pos;
  for (std::size_t r = 0; r < rows; ++r)
    if (tg.positives[r] != 0) {
      at.push_back(static_cast<std::uint32_t>(r));
      pos.push_back(tg.positives[r]);
    }
  if (at.empty()) return tape.constant(ad::Tensor<T>({1}));
  const std::size_t n = at.size();
  auto h = ad::embedding_lookup(ad::reshape(hidden, {rows, d}), std::move(at), {n});
  ad::Tensor<T> pad_mask({v});
  pad_mask[0] = T(-1e9);
  auto logits = ad::add(ad::matmul(h, table, /*transpose_b=*/true), tape.constant(std::move(pad_mask)));
  auto picked = ad::pick(ad::log_softmax(logits), std::move(pos));
  return ad::scale(ad::sum(picked), static_cast<T>(-1.0 / static_cast<double>(n)));
}

// ---------------------------------------------------------------------------
// Recommender: item tower + SASRec parameters.

template <typename T>
class Recommender {
 public:
  Recommender(ItemTower<T> tower, SasrecConfig cfg) : tower_(std::move(tower)), cfg_(cfg) {
    cfg_.validate(tower_.dim());
  }

  // Parameter registration order: adapter head, fusion, SASRec.
  void init(std::uint64_t seed) {
    params_ = ad::ParameterSet<T>();
    Rng rng = make_rng(seed, "init");
    tower_.init(params_, rng);
    init_sasrec(cfg_, tower_.dim(), params_, rng);
  }

  const SasrecConfig& config() const { return cfg_; }
  const ItemTower<T>& tower() const { return tower_; }
  ad::ParameterSet<T>& params() { return params_; }
  const ad::ParameterSet<T>& params() const { return params_; }

  // Current item table [N+1, d] (inference).
  ad::Tensor<T> item_table() {
    ad::Tape<T> tape;
    tape.recording = false;
    return tower_.build(tape, params_).table.value();
  }

  // Inner products of each context's last hidden state with its candidates.
  std::vector<std::vector<float>> score(const std::vector<std::span<const std::uint32_t>>& contexts,
                                        const std::vector<std::vector<std::uint32_t>>& candidates,
                                        const ad::Tensor<T>& table) {
    if (contexts.size() != candidates.size()) fail("score: contexts and candidates differ in count");
    for (const auto& c : contexts)
      if (c.empty()) fail("score: empty context");
    ad::Tape<T> tape;
    tape.recording = false;
    auto tv = tape.constant(table);
    const auto batch = make_batch(contexts, cfg_.max_len);
    const auto hidden = sasrec_forward(cfg_, tv, batch, params_, nullptr);
    const std::size_t d = tower_.dim(), L = batch.len, rows = table.shape[0];
    const auto& h = hidden.value().data;
    std::vector<std::vector<float>> out(contexts.size());
    for (std::size_t b = 0; b < contexts.size(); ++b) {
      const T* hb = h.data() + (b * L + L - 1) * d;
      for (auto c : candidates[b]) {
        if (c == 0 || c >= rows) fail("score: candidate id ", c, " out of range [1,", rows, ")");
        const T* e = table.data.data() + std::size_t{c} * d;
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(hb[j]) * e[j];
        out[b].push_back(static_cast<float>(s));
      }
    }
    return out;
  }

  BatchScorer scorer() {
    auto table = std::make_shared<ad::Tensor<T>>(item_table());
    return [this, table](const auto& ctx, const auto& cand) { return score(ctx, cand, *table); };
  }

  ad::Checkpoint checkpoint() const {
    ad::Checkpoint ck;
    tower_.save_frozen(ck);
    ck.put_params(params_);
    return ck;
  }

  void load(const ad::Checkpoint& ck) { ck.load_into(params_, /*require_all=*/true); }

 private:
  ItemTower<T> tower_;
  SasrecConfig cfg_;
  ad::ParameterSet<T> params_;
};

// ---------------------------------------------------------------------------
// Training.

inline constexpr std::size_t kNegativeRetries = 1000;

// Uniform item in [1, N] outside `history`.
inline std::uint32_t sample_training_negative(const std::unordered_set<std::uint32_t>& history,
                                              std::size_t num_items, Rng& rng) {
  for (std::size_t attempt = 0; attempt < kNegativeRetries; ++attempt) {
    const auto c = static_cast<std::uint32_t>(1 + uniform_index(rng, num_items));
    if (!history.contains(c)) return c;
  }
  fail("could not sample a negative outside a history of ", history.size(), " items after ",
       kNegativeRetries, " attempts (catalog ", num_items, ")");
}

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  std::vector<double> valid_ndcg10;  // after each epoch
  double initial_valid_ndcg10 = 0;
  double best_valid_ndcg10 = -1;
  std::size_t best_epoch = 0;  // 1-based; 0 = never improved
  std::size_t epochs_run = 0;
};

struct TrainOptions {
  // Optional cap on users evaluated per validation pass (0 = all).
  std::size_t valid_users = 0;
  // Sampled negatives per validation case.
  std::size_t negatives = kDefaultNegatives;
  bool verbose = false;
  // Invoked after every epoch.
  std::function<void(std::size_t epoch, double loss, double valid)> on_epoch;
};

// Trains `rec` on every user's training prefix. All randomness (init,
// shuffling, dropout, negatives) derives from `seed`. The best validation
// parameters are restored on return.
template <typename T>
TrainResult train(Recommender<T>& rec, const InteractionDataset& ds, std::uint64_t seed,
                  const TrainOptions& opts = {}) {
  const auto& cfg = rec.config();
  rec.init(seed);
  auto& params = rec.params();
  ad::Adam<T> adam(ad::AdamConfig{.lr = cfg.lr});
  Rng dropout_rng = make_rng(seed, "dropout");
  Rng negative_rng = make_rng(seed, "train.negatives");

  struct Example {
    std::span<const std::uint32_t> input, target;
    std::unordered_set<std::uint32_t> history;
  };
  std::vector<Example> examples;
  for (const auto& u : ds.users) {
    const auto prefix = u.train_prefix();
    if (prefix.size() < 2) continue;
    const std::size_t keep = std::min(prefix.size() - 1, cfg.max_len);
    Example ex;
    ex.input = prefix.subspan(prefix.size() - 1 - keep, keep);
    ex.target = prefix.subspan(prefix.size() - keep, keep);
    ex.history.insert(prefix.begin(), prefix.end());
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) fail("train: no user has a training prefix of length >= 2");

  InteractionDataset valid_ds;
  const InteractionDataset* vds = &ds;
  if (opts.valid_users && opts.valid_users < ds.users.size()) {
    valid_ds.num_items = ds.num_items;
    valid_ds.users.assign(ds.users.begin(), ds.users.begin() + static_cast<std::ptrdiff_t>(opts.valid_users));
    vds = &valid_ds;
  }
  auto validate = [&] { return evaluate_split(*vds, Split::kValid, rec.scorer(), seed, opts.negatives).metrics.ndcg10(); };

  TrainResult res;
  res.initial_valid_ndcg10 = validate();
  ad::Checkpoint best = rec.checkpoint();
  std::size_t since_best = 0;
  std::size_t step = 0;
  std::vector<std::size_t> order(examples.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = make_rng(seed, "shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    double epoch_loss = 0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::span<const std::uint32_t>> inputs, targets;
      for (std::size_t i = start; i < end; ++i) {
        inputs.push_back(examples[order[i]].input);
        targets.push_back(examples[order[i]].target);
      }
      const auto batch = make_batch(inputs, cfg.max_len);
      const auto tb = make_batch(targets, cfg.max_len);
      SeqTargets tg;
      tg.positives = tb.ids;
      tg.negatives.assign(tb.ids.size(), 0);
      if (cfg.loss == SeqLoss::kBce)
        for (std::size_t b = 0; b < batch.rows; ++b)
          for (std::size_t t = 0; t < batch.len; ++t)
            if (tb.at(b, t) != 0)
              tg.negatives[b * batch.len + t] =
                  sample_training_negative(examples[order[start + b]].history, ds.num_items, negative_rng);

      ad::Tape<T> tape;
      auto tower = rec.tower().build(tape, params);
      auto hidden = sasrec_forward(cfg, tower.table, batch, params, &dropout_rng);
      auto loss = cfg.loss == SeqLoss::kBce ? bce_loss(hidden, tower.table, tg)
                                            : softmax_loss(hidden, tower.table, tg);
      if (tower.aux) loss = ad::add(loss, *tower.aux);
      const double lv = loss.item();
      ++step;
      if (!std::isfinite(lv)) fail("training diverged: non-finite loss at step ", step);
      tape.backward(loss);
      rec.tower().mask_padding_grad(params);
      adam.step(params);
      res.step_losses.push_back(lv);
      epoch_loss += lv;
      ++epoch_steps;
    }
    res.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_steps));
    const double v = validate();
    res.valid_ndcg10.push_back(v);
    res.epochs_run = epoch;
    if (opts.on_epoch) opts.on_epoch(epoch, res.epoch_losses.back(), v);
    if (v > res.best_valid_ndcg10) {
      res.best_valid_ndcg10 = v;
      res.best_epoch = epoch;
      best = rec.checkpoint();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  rec.load(best);
  return res;
}

// Trains an ID-only model of width d and returns a checkpoint holding just
// its learned `id.table`, the input expected by concat and align fusion.
inline ad::Checkpoint pretrain_id_checkpoint(const InteractionDataset& ds, std::size_t d,
                                             const SasrecConfig& cfg, std::uint64_t seed,
                                             const TrainOptions& opts = {}) {
  Recommender<float> rec(ItemTower<float>::id_only(ds.num_items, d), cfg);
  train(rec, ds, seed, opts);
  ad::Checkpoint ck;
  ck.put(std::string(kIdTableName), rec.params().at(kIdTableName).value);
  return ck;
}

}  // namespace featrec
