// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>

#include "featrec/adapters.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace featrec {
namespace {

using testing::covariance;
using testing::expect_error;
using testing::jacobi_eigenvalues;
using testing::oracle_kmeans;

ItemEmbeddingTable random_table(std::size_t n, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  ItemEmbeddingTable t(n, h);
  // Anisotropic so the spectrum is well separated.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j)
      t.row(i)[j] = static_cast<float>(normal01(rng) * (1.0 + 0.7 * static_cast<double>(h - j)));
  return t;
}

// Squared reconstruction error of projecting centered rows onto the span of
// the orthonormal rows of `basis` (k x h).
double reconstruction_error(const ItemEmbeddingTable& t, const std::vector<double>& mean,
                            const std::vector<double>& basis, std::size_t k) {
  const std::size_t h = t.dim;
  double err = 0;
  for (std::size_t i = 0; i < t.rows; ++i) {
    std::vector<double> x(h), r(h, 0.0);
    for (std::size_t j = 0; j < h; ++j) x[j] = t.row(i)[j] - mean[j];
    for (std::size_t c = 0; c < k; ++c) {
      double dot = 0;
      for (std::size_t j = 0; j < h; ++j) dot += basis[c * h + j] * x[j];
      for (std::size_t j = 0; j < h; ++j) r[j] += dot * basis[c * h + j];
    }
    for (std::size_t j = 0; j < h; ++j) err += (x[j] - r[j]) * (x[j] - r[j]);
  }
  return err;
}

// --- PCA ------------------------------------------------------------------

TEST(Pca, CollinearPointsProjectOntoOneAxis) {
  ItemEmbeddingTable t(3, 2);
  t.values = {0, 0, 1, 1, 2, 2};
  const auto pca = fit_pca(t, 1);
  EXPECT_NEAR(pca.components[0], 1 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(pca.components[1], 1 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(pca.eigenvalues[0], 2.0, 1e-12);  // variance of (-√2, 0, √2)
  const auto y = pca.apply(t);
  EXPECT_NEAR(y.values[0], -std::sqrt(2.0), 1e-6);
  EXPECT_NEAR(y.values[1], 0.0, 1e-6);
  EXPECT_NEAR(y.values[2], std::sqrt(2.0), 1e-6);
}

TEST(Pca, MeanMapsToZero) {
  const auto t = random_table(40, 6, 3);
  const auto pca = fit_pca(t, 3);
  std::vector<float> mean(pca.mean.begin(), pca.mean.end());
  for (double v : pca.apply(mean)) EXPECT_NEAR(v, 0.0, 1e-5);
}

TEST(Pca, FullRankPreservesPairwiseDistances) {
  const auto t = random_table(30, 5, 11);
  const auto pca = fit_pca(t, 5);
  const auto y = pca.apply(t);
  for (std::size_t a = 0; a < 30; ++a)
    for (std::size_t b = a + 1; b < 30; ++b) {
      double dx = 0, dy = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        dx += std::pow(t.row(a)[j] - t.row(b)[j], 2);
        dy += std::pow(y.row(a)[j] - y.row(b)[j], 2);
      }
      EXPECT_NEAR(std::sqrt(dx), std::sqrt(dy), 1e-4 * (1 + std::sqrt(dx)));
    }
}

TEST(Pca, EigenvaluesMatchJacobiOracle) {
  const auto t = random_table(50, 8, 21);
  const auto pca = fit_pca(t, 8);
  const auto oracle = jacobi_eigenvalues(covariance(t), 8);
  for (std::size_t k = 0; k < 8; ++k)
    EXPECT_NEAR(pca.eigenvalues[k], oracle[k], 1e-5 * std::max(1.0, oracle[k])) << k;
}

TEST(Pca, ComponentsAreOrthonormalAndSignNormalized) {
  const auto t = random_table(50, 8, 22);
  const auto pca = fit_pca(t, 4);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = 0; b < 4; ++b) {
      double dot = 0;
      for (std::size_t j = 0; j < 8; ++j) dot += pca.component(a)[j] * pca.component(b)[j];
      EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-10);
    }
    const auto c = pca.component(a);
    const auto first = std::find_if(c.begin(), c.end(), [](double v) { return std::abs(v) > 1e-12; });
    EXPECT_GT(*first, 0.0);
    if (a > 0) EXPECT_GE(pca.eigenvalues[a - 1], pca.eigenvalues[a]);
  }
}

TEST(Pca, ProjectedVarianceEqualsEigenvalue) {
  const auto t = random_table(60, 6, 5);
  const auto pca = fit_pca(t, 3);
  const auto y = pca.apply(t);
  for (std::size_t k = 0; k < 3; ++k) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < 60; ++i) mean += y.row(i)[k] / 60.0;
    for (std::size_t i = 0; i < 60; ++i) var += std::pow(y.row(i)[k] - mean, 2) / 59.0;
    EXPECT_NEAR(var, pca.eigenvalues[k], 1e-4 * pca.eigenvalues[k]);
  }
}

TEST(Pca, ReconstructionErrorFallsWithRankAndBeatsRandomSubspaces) {
  const auto t = random_table(50, 8, 9);
  const auto full = fit_pca(t, 7);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= 7; ++k) {
    const double e = reconstruction_error(t, full.mean, full.components, k);
    EXPECT_LE(e, prev + 1e-9);
    prev = e;
  }
  // Random orthonormal 3-dim subspaces never beat the top-3 PCA subspace.
  const double best = reconstruction_error(t, full.mean, full.components, 3);
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd g(8, 3);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal01(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(8, 3);
    std::vector<double> basis(3 * 8);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t j = 0; j < 8; ++j) basis[c * 8 + j] = q(j, c);
    EXPECT_GE(reconstruction_error(t, full.mean, basis, 3), best - 1e-6);
  }
}

TEST(Pca, RankDeficientTableWarnsAndZeroesTrailingEigenvalues) {
  ItemEmbeddingTable t(10, 4);
  for (std::size_t i = 0; i < 10; ++i) {
    const float s = static_cast<float>(i) - 4.5f;
    t.row(i)[0] = s;
    t.row(i)[1] = 2 * s;
  }
  std::vector<std::string> warnings;
  auto saved = warning_sink();
  warning_sink() = [&](const std::string& m) { warnings.push_back(m); };
  const auto pca = fit_pca(t, 3);
  warning_sink() = saved;
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("numerical rank 1"), std::string::npos);
  EXPECT_GT(pca.eigenvalues[0], 0.0);
  EXPECT_EQ(pca.eigenvalues[1], 0.0);
  EXPECT_EQ(pca.eigenvalues[2], 0.0);
}

TEST(Pca, CheckpointRoundTrip) {
  const auto t = random_table(20, 6, 4);
  const auto pca = fit_pca(t, 3);
  ad::Checkpoint ck;
  pca.save(ck);
  const auto back = PcaTransform::load(ad::Checkpoint::decode(ck.encode()));
  const auto a = pca.apply(t), b = back.apply(t);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-5);
}

// --- PQ -------------------------------------------------------------------

TEST(Pq, FourCornersAreQuantizedExactly) {
  ItemEmbeddingTable t(4, 2);
  t.values = {0, 0, 0, 1, 1, 0, 1, 1};
  const auto pq = fit_pq(t, {.subspaces = 2, .centroids = 2, .iterations = 10, .restarts = 1}, 1);
  EXPECT_NEAR(pq.total_objective(), 0.0, 1e-12);
  for (std::size_t m = 0; m < 2; ++m) {
    std::vector<double> cb = pq.codebooks[m];
    std::sort(cb.begin(), cb.end());
    EXPECT_EQ(cb, (std::vector<double>{0, 1}));
  }
  const auto rec = pq.apply(t);
  EXPECT_EQ(rec.values, t.values);
}

TEST(Pq, OneCentroidPerDistinctPointGivesZeroError) {
  const auto t = random_table(12, 4, 6);
  const auto pq = fit_pq(t, {.subspaces = 2, .centroids = 12, .iterations = 5, .restarts = 1}, 3);
  EXPECT_NEAR(pq.total_objective(), 0.0, 1e-9);
}


TEST(Pq, MatchesIndependentLloydOracle) {
  const auto t = random_table(64, 8, 12);
  const PqConfig cfg{.subspaces = 4, .centroids = 4, .iterations = 25, .restarts = 3};
  const auto pq = fit_pq(t, cfg, 42);
  for (std::size_t m = 0; m < 4; ++m) {
    std::vector<std::vector<double>> pts(64, std::vector<double>(2));
    for (std::size_t i = 0; i < 64; ++i)
      for (std::size_t j = 0; j < 2; ++j) pts[i][j] = t.row(i)[m * 2 + j];
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_cent;
    for (std::size_t r = 0; r < 3; ++r) {
      const auto o = oracle_kmeans(pts, 4, 25, make_rng(42, "pq", m * 1000 + r));
      if (o.objective < best) {
        best = o.objective;
        best_cent = o.cent;
      }
    }
    EXPECT_NEAR(pq.objective[m], best, 1e-5 * best) << "subspace " << m;
    ASSERT_EQ(pq.codebooks[m].size(), best_cent.size());
    for (std::size_t q = 0; q < best_cent.size(); ++q) EXPECT_NEAR(pq.codebooks[m][q], best_cent[q], 1e-5);
  }
}

TEST(Pq, LloydHistoryNeverIncreases) {
  const auto t = random_table(80, 6, 13);
  const auto pq = fit_pq(t, {.subspaces = 3, .centroids = 6, .iterations = 20, .restarts = 2}, 7);
  for (const auto& h : pq.history)
    for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LE(h[i], h[i - 1] + 1e-9);
}

TEST(Pq, EncodeBreaksTiesTowardLowerIndex) {
  PqCodebooks pq;
  pq.subspaces = 1;
  pq.centroids = 2;
  pq.sub_dim = 1;
  pq.codebooks = {{-1.0, 1.0}};
  EXPECT_EQ(pq.encode(std::vector<float>{0.0f})[0], 0u);
  EXPECT_EQ(pq.encode(std::vector<float>{0.5f})[0], 1u);
}

TEST(Pq, BatchErrorIsSumOfSubspaceObjectives) {
  const auto t = random_table(40, 6, 14);
  const auto pq = fit_pq(t, {.subspaces = 3, .centroids = 5, .iterations = 15, .restarts = 1}, 2);
  const auto rec = pq.apply(t);
  double err = 0;
  for (std::size_t i = 0; i < t.values.size(); ++i) err += std::pow(double(t.values[i]) - rec.values[i], 2);
  EXPECT_NEAR(err, pq.total_objective(), 1e-4 * pq.total_objective());
}

TEST(Pq, MoreCentroidsNeverHurt) {
  const auto t = random_table(100, 4, 15);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k : {1, 2, 4, 8, 16}) {
    const auto pq = fit_pq(t, {.subspaces = 2, .centroids = k, .iterations = 30, .restarts = 3}, 5);
    EXPECT_LE(pq.total_objective(), prev * (1 + 1e-9)) << "K=" << k;
    prev = pq.total_objective();
  }
}

TEST(Pq, ConfigErrorsAndDefaults) {
  const auto t = random_table(40, 6, 16);
  expect_error([&] { fit_pq(t, {.subspaces = 4}, 1); }, "not divisible");
  expect_error([&] { fit_pq(t, {.subspaces = 2, .centroids = 41}, 1); }, "exceeds N");
  EXPECT_EQ(default_pq_centroids(40), 10u);
  EXPECT_EQ(default_pq_centroids(5000), 256u);
  EXPECT_EQ(fit_pq(t, {.subspaces = 2, .iterations = 2, .restarts = 1}, 1).centroids, 10u);
}

TEST(Pq, CheckpointRoundTrip) {
  const auto t = random_table(30, 4, 17);
  const auto pq = fit_pq(t, {.subspaces = 2, .centroids = 3, .iterations = 5, .restarts = 1}, 1);
  ad::Checkpoint ck;
  pq.save(ck);
  const auto back = PqCodebooks::load(ck);
  EXPECT_EQ(back.subspaces, 2u);
  EXPECT_EQ(back.centroids, 3u);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(back.encode(t.row(i)), pq.encode(t.row(i)));
}

// --- heads -------------------------------------------------------------------

AdapterSpec spec(Architecture a, std::size_t in, std::size_t d, std::size_t experts = 8) {
  AdapterSpec s;
  s.architecture = a;
  s.input_dim = in;
  s.d = d;
  s.experts = experts;
  return s.resolved();
}

TEST(Heads, ParameterCounts) {
  Rng rng(1);
  ad::ParameterSet<float> lin, mlp, moe;
  make_trainable_adapter(spec(Architecture::kLinear, 8, 4), lin, rng);
  make_trainable_adapter(spec(Architecture::kMlp, 8, 4), mlp, rng);
  make_trainable_adapter(spec(Architecture::kMoe, 8, 4, 8), moe, rng);
  EXPECT_EQ(lin.count(), 36u);
  EXPECT_EQ(mlp.count(), 56u);
  EXPECT_EQ(moe.count(), 360u);
  ad::ParameterSet<float> none;
  make_trainable_adapter(spec(Architecture::kPcaOnly, 4, 4), none, rng);
  EXPECT_EQ(none.count(), 0u);
}

ad::Tensor<double> random_input(std::size_t n, std::size_t in, std::uint64_t seed) {
  Rng rng(seed);
  ad::Tensor<double> x({n, in});
  for (auto& v : x.data) v = normal01(rng);
  return x;
}

TEST(Heads, SingleExpertMoeIsLinear) {
  Rng rng(2);
  ad::ParameterSet<double> p;
  const auto s = spec(Architecture::kMoe, 5, 3, 1);
  make_trainable_adapter(s, p, rng);
  const auto x = random_input(4, 5, 3);
  ad::Tape<double> tape;
  const auto gate = moe_gate(tape.constant(x), p);
  for (double g : gate.value().data) EXPECT_DOUBLE_EQ(g, 1.0);
  const auto y = adapter_forward(s, tape.constant(x), p);
  const auto& w = p.at("adapter.moe.experts.weight").value;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t o = 0; o < 3; ++o) {
      double ref = 0;
      for (std::size_t j = 0; j < 5; ++j) ref += x.data[i * 5 + j] * w.data[j * 3 + o];
      EXPECT_NEAR(y.value().data[i * 3 + o], ref, 1e-12);
    }
}

TEST(Heads, IdenticalExpertsIgnoreTheGate) {
  Rng rng(4);
  ad::ParameterSet<double> p;
  const auto s = spec(Architecture::kMoe, 5, 3, 4);
  make_trainable_adapter(s, p, rng);
  auto& w = p.at("adapter.moe.experts.weight").value;
  auto& b = p.at("adapter.moe.experts.bias").value;
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t e = 1; e < 4; ++e)
      for (std::size_t o = 0; o < 3; ++o) w.data[j * 12 + e * 3 + o] = w.data[j * 12 + o];
  for (std::size_t i = 0; i < 12; ++i) b.data[i] = 0.1 * static_cast<double>(i % 3);
  const auto x = random_input(6, 5, 5);
  ad::Tape<double> tape;
  const auto y = adapter_forward(s, tape.constant(x), p);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t o = 0; o < 3; ++o) {
      double ref = 0.1 * static_cast<double>(o);
      for (std::size_t j = 0; j < 5; ++j) ref += x.data[i * 5 + j] * w.data[j * 12 + o];
      EXPECT_NEAR(y.value().data[i * 3 + o], ref, 1e-12);
    }
}

TEST(Heads, GateRowsLieOnTheSimplex) {
  Rng rng(6);
  ad::ParameterSet<double> p;
  make_trainable_adapter(spec(Architecture::kMoe, 7, 3, 5), p, rng);
  for (auto& v : p.at("adapter.moe.gate.weight").value.data) v *= 20;  // sharpen
  ad::Tape<double> tape;
  const auto g = moe_gate(tape.constant(random_input(30, 7, 8)), p);
  for (std::size_t i = 0; i < 30; ++i) {
    double s = 0;
    for (std::size_t e = 0; e < 5; ++e) {
      const double v = g.value().data[i * 5 + e];
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

class HeadGradients : public ::testing::TestWithParam<Architecture> {};

TEST_P(HeadGradients, MatchFiniteDifferences) {
  Rng rng(9);
  ad::ParameterSet<double> p;
  const auto s = spec(GetParam(), 4, 3, 3);
  make_trainable_adapter(s, p, rng);
  // Non-zero biases so every path is exercised.
  for (auto& par : p)
    if (par->name.ends_with("bias"))
      for (auto& v : par->value.data) v = 0.3 * normal01(rng);
  const auto x = random_input(5, 4, 10);
  const auto target = random_input(5, 3, 11);
  auto res = testing::gradcheck(p, [&](ad::Tape<double>& tape, ad::ParameterSet<double>& ps) {
    auto y = adapter_forward(s, tape.constant(x), ps);
    auto diff = ad::sub(y, tape.constant(target));
    return ad::mean(ad::mul(diff, diff));
  });
  EXPECT_LT(res.max_rel_error, 1e-6) << res.worst;
  EXPECT_EQ(res.coordinates, p.count(true));
}

INSTANTIATE_TEST_SUITE_P(Adapters, HeadGradients,
                         ::testing::Values(Architecture::kLinear, Architecture::kMlp, Architecture::kMoe),
                         [](const auto& info) { return std::string(to_string(info.param)); });

// --- spec and pipeline -----------------------------------------------------------

TEST(AdapterSpecTest, ResolvesDefaultsAndRejectsBadCombinations) {
  AdapterSpec s;
  s.architecture = Architecture::kMoe;
  s.use_pca_preprocess = true;
  s.input_dim = 1024;
  EXPECT_EQ(s.resolved().d_pca, 128u);
  s.input_dim = 64;
  EXPECT_EQ(s.resolved().d_pca, 32u);
  s.d_pca = 64;
  expect_error([&] { s.resolved(); }, "d_pca (64) < input_dim (64)");

  AdapterSpec pca;
  pca.architecture = Architecture::kPcaOnly;
  pca.input_dim = 64;
  pca.d = 16;
  pca.d_pca = 8;
  expect_error([&] { pca.resolved(); }, "must equal d_pca");
  pca.d_pca = 0;
  EXPECT_EQ(pca.resolved().d_pca, 16u);
  EXPECT_EQ(parse_architecture("moe"), Architecture::kMoe);
  expect_error([] { parse_architecture("transformer"); }, "unknown adapter architecture");
}

TEST(Pipeline, ShapesComposeThroughFrozenStagesAndHead) {
  const auto t = random_table(60, 32, 18);
  struct Case {
    Architecture arch;
    bool pca;
    std::size_t frozen_dim;
  };
  for (const auto& c : {Case{Architecture::kMoe, true, 16}, Case{Architecture::kLinear, false, 32},
                        Case{Architecture::kMlp, true, 16}, Case{Architecture::kPq, true, 16},
                        Case{Architecture::kPq, false, 32}, Case{Architecture::kPcaOnly, false, 8}}) {
    AdapterSpec s;
    s.architecture = c.arch;
    s.use_pca_preprocess = c.pca;
    s.d = 8;
    s.d_pca = c.arch == Architecture::kPcaOnly ? 8 : 16;
    s.experts = 3;
    s.pq = {.subspaces = 4, .centroids = 4, .iterations = 5, .restarts = 1};
    const auto p = AdapterPipeline::fit(s, t, 1);
    const auto f = p.frozen_features(t);
    EXPECT_EQ(f.dim, c.frozen_dim) << to_string(c.arch);
    ad::ParameterSet<float> params;
    Rng rng(3);
    p.init_head(params, rng);
    ad::Tape<float> tape;
    const auto y = p.forward(tape.constant(to_tensor<float>(f)), params);
    EXPECT_EQ(y.shape(), (ad::Shape{60, 8})) << to_string(c.arch);
  }
}

TEST(Pipeline, FitIsDeterministicAndRestorable) {
  const auto t = random_table(60, 16, 19);
  AdapterSpec s;
  s.architecture = Architecture::kPq;
  s.use_pca_preprocess = true;
  s.d = 8;
  s.d_pca = 8;
  s.pq = {.subspaces = 2, .centroids = 6, .iterations = 10, .restarts = 2};
  const auto a = AdapterPipeline::fit(s, t, 99);
  const auto b = AdapterPipeline::fit(s, t, 99);
  EXPECT_EQ(a.frozen_features(t).values, b.frozen_features(t).values);
  ad::Checkpoint ck;
  a.save_frozen(ck);
  AdapterSpec with_dim = s;
  with_dim.input_dim = 16;
  const auto r = AdapterPipeline::restore(with_dim, ad::Checkpoint::decode(ck.encode()));
  const auto fa = a.frozen_features(t), fr = r.frozen_features(t);
  for (std::size_t i = 0; i < fa.values.size(); ++i) EXPECT_NEAR(fa.values[i], fr.values[i], 1e-5);
}

}  // namespace
}  // namespace featrec
