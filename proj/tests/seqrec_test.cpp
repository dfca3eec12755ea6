// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>

#include "featrec/seqrec.hpp"
#include "featrec/synthetic.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

namespace featrec {
namespace {

using testing::expect_error;

ad::Tensor<double> random_table(std::size_t n, std::size_t d, Rng& rng) {
  ad::Tensor<double> t({n + 1, d});
  for (std::size_t i = d; i < t.size(); ++i) t[i] = normal01(rng);
  return t;
}

SasrecConfig tiny(std::size_t heads = 1) {
  SasrecConfig c;
  c.max_len = 4;
  c.blocks = 1;
  c.heads = heads;
  c.dropout = 0.0;
  return c;
}

// Hidden states of the given sequences under fixed random parameters.
ad::Tensor<double> hidden_of(const SasrecConfig& cfg, const ad::Tensor<double>& table,
                             const std::vector<std::vector<std::uint32_t>>& seqs, std::uint64_t seed = 1) {
  ad::ParameterSet<double> p;
  Rng rng(seed);
  init_sasrec(cfg, table.shape[1], p, rng);
  std::vector<std::span<const std::uint32_t>> spans(seqs.begin(), seqs.end());
  ad::Tape<double> tape;
  return sasrec_forward(cfg, tape.constant(table), make_batch(spans, cfg.max_len), p, nullptr).value();
}

TEST(Batch, LeftPadsAndKeepsMostRecent) {
  const std::vector<std::uint32_t> a = {1, 2, 3, 4, 5, 6}, b = {7, 8};
  const auto batch = make_batch({a, b}, 4);
  EXPECT_EQ(batch.len, 4u);
  EXPECT_EQ(batch.ids, (std::vector<std::uint32_t>{3, 4, 5, 6, 0, 0, 7, 8}));
}

TEST(Sasrec, ParameterCountMatchesClosedForm) {
  for (auto [L, blocks, d] : {std::tuple{50, 2, 64}, std::tuple{4, 1, 8}, std::tuple{20, 3, 32}}) {
    SasrecConfig c;
    c.max_len = L;
    c.blocks = blocks;
    ad::ParameterSet<float> p;
    Rng rng(1);
    init_sasrec(c, d, p, rng);
    EXPECT_EQ(p.count(true), sasrec_param_count(c, d));
  }
  EXPECT_EQ(sasrec_param_count(SasrecConfig{}, 64), 50u * 64 + 2 * (6 * 64 * 64 + 640) + 128);
  expect_error([] { tiny(3).validate(8); }, "not divisible by heads=3");
}

TEST(Sasrec, FutureItemsDoNotAffectEarlierPositions) {
  Rng rng(2);
  const auto table = random_table(20, 8, rng);
  for (std::size_t heads : {1, 2}) {
    auto cfg = tiny(heads);
    cfg.max_len = 6;
    const auto h1 = hidden_of(cfg, table, {{3, 4, 5, 6, 7, 8}});
    for (std::size_t t = 0; t < 5; ++t) {
      // Replace every item after position t.
      std::vector<std::uint32_t> s = {3, 4, 5, 6, 7, 8};
      for (std::size_t j = t + 1; j < 6; ++j) s[j] = static_cast<std::uint32_t>(11 + j);
      const auto h2 = hidden_of(cfg, table, {s});
      for (std::size_t i = 0; i <= t; ++i)
        for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(h1[i * 8 + j], h2[i * 8 + j]) << "t=" << t << " i=" << i;
      EXPECT_NE(h1[5 * 8], h2[5 * 8]);
    }
  }
}

TEST(Sasrec, PaddingDoesNotChangeTheLastState) {
  Rng rng(3);
  const auto table = random_table(20, 8, rng);
  auto cfg = tiny(2);
  cfg.max_len = 6;
  const auto alone = hidden_of(cfg, table, {{5, 9}});
  const auto padded = hidden_of(cfg, table, {{5, 9}, {1, 2, 3, 4, 5, 6}});
  ASSERT_EQ(alone.shape, (ad::Shape{1, 2, 8}));
  ASSERT_EQ(padded.shape, (ad::Shape{2, 6, 8}));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(alone[8 + j], padded[5 * 8 + j], 1e-12);
}

TEST(Losses, BceOrthogonalCaseIsTwoLogTwo) {
  ad::Tape<double> tape;
  // h = e1; positive and negative rows are orthogonal to it.
  auto hidden = tape.constant(ad::Tensor<double>({1, 1, 3}, {1, 0, 0}));
  auto table = tape.constant(ad::Tensor<double>({3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 1}));
  EXPECT_NEAR(bce_loss(hidden, table, {{1}, {2}}).item(), 2 * std::log(2.0), 1e-12);
  expect_error([&] { bce_loss(hidden, table, {{1}, {1}}); }, "invalid negative");
}

TEST(Losses, BceMatchesScalarOracleAndSaturatesFinitely) {
  Rng rng(4);
  const std::size_t B = 3, L = 4, d = 5, n = 9;
  ad::Tensor<double> hidden({B, L, d});
  for (auto& v : hidden.data) v = normal01(rng);
  const auto table = random_table(n, d, rng);
  SeqTargets tg;
  for (std::size_t r = 0; r < B * L; ++r) {
    const bool has = r % 4 != 0;
    tg.positives.push_back(has ? static_cast<std::uint32_t>(1 + r % n) : 0);
    tg.negatives.push_back(has ? static_cast<std::uint32_t>(1 + (r + 3) % n) : 0);
  }
  double brute = 0;
  std::size_t count = 0;
  auto dot = [&](std::size_t r, std::uint32_t item) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += hidden[r * d + j] * table[item * d + j];
    return s;
  };
  for (std::size_t r = 0; r < B * L; ++r) {
    if (!tg.positives[r]) continue;
    const double sp = dot(r, tg.positives[r]), sn = dot(r, tg.negatives[r]);
    brute += -std::log(1 / (1 + std::exp(-sp))) - std::log(1 - 1 / (1 + std::exp(-sn)));
    ++count;
  }
  ad::Tape<double> tape;
  EXPECT_NEAR(bce_loss(tape.constant(hidden), tape.constant(table), tg).item(), brute / count, 1e-9);

  // Saturated scores: loss stays finite and near its limits.
  auto big = hidden;
  for (auto& v : big.data) v *= 1e4;
  const double lv = bce_loss(tape.constant(big), tape.constant(table), tg).item();
  EXPECT_TRUE(std::isfinite(lv));
}

TEST(Losses, AllPaddingTargetsGiveZero) {
  ad::Tape<double> tape;
  auto hidden = tape.constant(ad::Tensor<double>({2, 2, 3}));
  auto table = tape.constant(ad::Tensor<double>({4, 3}));
  const SeqTargets none{{0, 0, 0, 0}, {0, 0, 0, 0}};
  EXPECT_EQ(bce_loss(hidden, table, none).item(), 0.0);
  EXPECT_EQ(softmax_loss(hidden, table, none).item(), 0.0);
}

TEST(Losses, SoftmaxMatchesLogSumExpOracle) {
  Rng rng(5);
  const std::size_t rows = 4, d = 3, n = 6;
  ad::Tensor<double> hidden({rows, d});
  for (auto& v : hidden.data) v = normal01(rng);
  const auto table = random_table(n, d, rng);
  const SeqTargets tg{{2, 0, 6, 1}, {}};
  double brute = 0;
  for (std::size_t r : {0u, 2u, 3u}) {
    std::vector<double> logits;
    for (std::size_t i = 1; i <= n; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += hidden[r * d + j] * table[i * d + j];
      logits.push_back(s);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    brute += -(logits[tg.positives[r] - 1] - mx - std::log(z));
  }
  ad::Tape<double> tape;
  EXPECT_NEAR(softmax_loss(tape.constant(hidden), tape.constant(table), tg).item(), brute / 3, 1e-9);
}

class SasrecGradients : public ::testing::TestWithParam<std::tuple<std::size_t, SeqLoss>> {};

TEST_P(SasrecGradients, MatchFiniteDifferences) {
  const auto [heads, loss] = GetParam();
  auto cfg = tiny(heads);
  const std::size_t d = 8, n = 7;
  Rng rng(6);
  ad::ParameterSet<double> p;
  p.add("table", random_table(n, d, rng));
  init_sasrec(cfg, d, p, rng);
  // Perturb gains and biases away from their 1/0 initial values.
  for (auto& par : p)
    if (par->name.ends_with("bias") || par->name.ends_with("gain"))
      for (auto& v : par->value.data) v += 0.2 * normal01(rng);
  const std::vector<std::uint32_t> a = {1, 2, 3}, b = {4, 5, 6, 7};
  const auto batch = make_batch({a, b}, cfg.max_len);  // first row left-padded
  const SeqTargets tg{{0, 2, 3, 4, 5, 6, 7, 1}, {0, 7, 6, 5, 4, 3, 2, 3}};
  auto res = testing::gradcheck(p, [&](ad::Tape<double>& t, ad::ParameterSet<double>& ps) {
    auto table = t.param(ps.at("table"));
    auto h = sasrec_forward(cfg, table, batch, ps, nullptr);
    return loss == SeqLoss::kBce ? bce_loss(h, table, tg) : softmax_loss(h, table, tg);
  }, /*h=*/1e-5);
  // A small step keeps the stencil from straddling a ReLU kink in the
  // feed-forward layer, which a 1e-3 step does for one coordinate here.
  // The padding row of the table never reaches the loss; its gradient is 0
  // on both sides, which rel_error judges absolutely.
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

INSTANTIATE_TEST_SUITE_P(Seqrec, SasrecGradients,
                         ::testing::Combine(::testing::Values(1u, 2u),
                                            ::testing::Values(SeqLoss::kBce, SeqLoss::kSoftmax)),
                         [](const auto& info) {
                           return std::to_string(std::get<0>(info.param)) + "head_" +
                                  std::string(to_string(std::get<1>(info.param)));
                         });

// --- recommender -------------------------------------------------------------------

InteractionDataset small_dataset(std::uint64_t seed = 7) {
  SyntheticConfig c;
  c.items = 40;
  c.users = 120;
  c.clusters = 4;
  c.dim = 8;
  c.min_seq = 6;
  c.max_seq = 12;
  c.seed = seed;
  return build_dataset(generate_synthetic(c).interactions, c.items, 5);
}

SasrecConfig small_cfg(std::size_t epochs) {
  SasrecConfig c;
  c.max_len = 8;
  c.blocks = 1;
  c.dropout = 0.1;
  c.batch_size = 32;
  c.lr = 5e-3;
  c.epochs = epochs;
  c.patience = 100;
  return c;
}

// The small catalog cannot supply 100 negatives per user.
const TrainOptions kSmallOpts{.negatives = 20};

TEST(Recommender, ScoresMatchBruteForceHiddenDotProducts) {
  Recommender<double> rec(ItemTower<double>::id_only(120, 8), small_cfg(1));
  rec.init(3);
  const auto table = rec.item_table();
  const std::vector<std::uint32_t> ctx = {5, 17, 3};
  std::vector<std::uint32_t> cand(101);
  std::iota(cand.begin(), cand.end(), 10u);
  const auto scores = rec.score({ctx}, {cand}, table)[0];

  ad::Tape<double> tape;
  const auto h = sasrec_forward(rec.config(), tape.constant(table), make_batch({ctx}, 8), rec.params(), nullptr).value();
  for (std::size_t c = 0; c < cand.size(); ++c) {
    double s = 0;
    for (std::size_t j = 0; j < 8; ++j) s += h[2 * 8 + j] * table[cand[c] * 8 + j];
    EXPECT_NEAR(scores[c], s, 1e-5 * std::max(1.0, std::abs(s)));
  }
  // Duplicates score equally; reordering candidates permutes scores.
  const auto dup = rec.score({ctx}, {{12, 40, 12}}, table)[0];
  EXPECT_EQ(dup[0], dup[2]);
  std::vector<std::uint32_t> rev(cand.rbegin(), cand.rend());
  const auto rs = rec.score({ctx}, {rev}, table)[0];
  for (std::size_t c = 0; c < cand.size(); ++c) EXPECT_EQ(rs[c], scores[cand.size() - 1 - c]);
  expect_error([&] { rec.score({ctx}, {{0}}, table); }, "out of range");
}

TEST(Training, SameSeedGivesIdenticalCheckpoint) {
  const auto ds = small_dataset();
  auto run = [&](std::uint64_t seed) {
    Recommender<float> rec(ItemTower<float>::id_only(ds.num_items, 8), small_cfg(2));
    const auto r = train(rec, ds, seed, kSmallOpts);
    return std::pair{rec.checkpoint().encode(), r.step_losses};
  };
  const auto a = run(42), b = run(42), c = run(43);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.first, c.first);
}

TEST(Training, LossFallsAndValidationImproves) {
  const auto ds = small_dataset();
  Recommender<float> rec(ItemTower<float>::id_only(ds.num_items, 16), small_cfg(15));
  const auto r = train(rec, ds, 42, kSmallOpts);
  ASSERT_EQ(r.epochs_run, 15u);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
  // Moving average over the first and last four steps.
  const auto& s = r.step_losses;
  const double head = (s[0] + s[1] + s[2] + s[3]) / 4;
  const double tail = (s[s.size() - 1] + s[s.size() - 2] + s[s.size() - 3] + s[s.size() - 4]) / 4;
  EXPECT_LT(tail, head);
  EXPECT_GT(r.best_valid_ndcg10, r.initial_valid_ndcg10);
  EXPECT_GE(r.best_epoch, 1u);
  // The restored parameters reproduce the best validation score.
  EXPECT_NEAR(evaluate_split(ds, Split::kValid, rec.scorer(), 42, 20).metrics.ndcg10(), r.best_valid_ndcg10, 1e-9);
}

TEST(Training, EarlyStoppingHonoursPatience) {
  const auto ds = small_dataset();
  auto cfg = small_cfg(200);
  cfg.patience = 2;
  Recommender<float> rec(ItemTower<float>::id_only(ds.num_items, 8), cfg);
  const auto r = train(rec, ds, 42, kSmallOpts);
  EXPECT_LT(r.epochs_run, 200u);
  EXPECT_EQ(r.epochs_run, std::max<std::size_t>(r.best_epoch, 0) + 2);
}

TEST(Training, FrozenStagesAndTablesStayFixed) {
  SyntheticConfig c;
  c.items = 40;
  c.users = 120;
  c.clusters = 4;
  c.dim = 12;
  c.min_seq = 6;
  c.max_seq = 12;
  const auto data = generate_synthetic(c);
  const auto ds = build_dataset(data.interactions, c.items, 5);
  const auto table = build_item_table(data.tokens, Pooling::kMean);
  AdapterSpec s;
  s.architecture = Architecture::kMoe;
  s.use_pca_preprocess = true;
  s.d = 8;
  s.d_pca = 8;
  s.experts = 2;
  const auto adapter = AdapterPipeline::fit(s, table, 1);
  Rng rng(2);
  ad::Checkpoint idck;
  idck.put(std::string(kIdTableName), IdEmbeddingTable::fresh(40, 8, rng).tensor());
  const auto ids = IdEmbeddingTable::from_checkpoint(idck, "x");
  Recommender<float> rec(ItemTower<float>(adapter, table, {FusionStrategy::kAlign, {}}, ids), small_cfg(2));
  train(rec, ds, 42, kSmallOpts);
  EXPECT_EQ(rec.params().at(kIdTableName).value.data, ids.values);
  const auto ck = rec.checkpoint();
  ad::Checkpoint frozen;
  adapter.save_frozen(frozen);
  for (const auto& name : {"pca.mean", "pca.components"})
    if (frozen.find(name)) EXPECT_EQ(ck.at(name).data, frozen.at(name).data) << name;
}

TEST(Training, NonFiniteLossIsReported) {
  const auto ds = small_dataset();
  ItemEmbeddingTable bad(40, 4);
  for (auto& v : bad.values) v = std::numeric_limits<float>::quiet_NaN();
  AdapterSpec s;
  s.architecture = Architecture::kLinear;
  s.d = 8;
  Recommender<float> rec(ItemTower<float>(AdapterPipeline::fit(s, bad, 1), bad, {}), small_cfg(1));
  expect_error([&] { train(rec, ds, 42, kSmallOpts); }, "training diverged: non-finite loss at step 1");
}

TEST(Training, NegativeSamplerAvoidsHistory) {
  Rng rng(8);
  const std::unordered_set<std::uint32_t> hist = {1, 2, 3, 4, 5};
  for (int i = 0; i < 200; ++i) {
    const auto c = sample_training_negative(hist, 6, rng);
    EXPECT_EQ(c, 6u);
  }
  const std::unordered_set<std::uint32_t> full = {1, 2, 3};
  expect_error([&] { sample_training_negative(full, 3, rng); }, "after 1000 attempts");
}

}  // namespace
}  // namespace featrec
