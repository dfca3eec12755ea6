// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Feature adapters mapping H-dim semantic item vectors to the recommender
// dimension d.
//
// An adapter is a frozen stage (optional PCA, then optional product
// quantization reconstruction) fitted once on the item table, followed by a
// trainable head (linear, two-layer MLP, or a dense mixture of linear
// experts). The pca_only architecture has no head: PCA output is the item
// representation.

#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "featrec/autodiff/checkpoint.hpp"
#include "featrec/autodiff/tape.hpp"
#include "featrec/common.hpp"
#include "featrec/embedding_io.hpp"

namespace featrec {

// ---------------------------------------------------------------------------
// PCA

struct PcaTransform {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::vector<double> mean;        // input_dim
  std::vector<double> components;  // output_dim x input_dim, rows orthonormal
  std::vector<double> eigenvalues;  // output_dim, non-increasing

  std::span<const double> component(std::size_t k) const {
    return {components.data() + k * input_dim, input_dim};
  }

  std::vector<double> apply(std::span<const float> x) const {
    if (x.size() != input_dim) fail("apply_pca: input has dim ", x.size(), ", expected ", input_dim);
    std::vector<double> out(output_dim, 0.0);
    for (std::size_t k = 0; k < output_dim; ++k) {
      const double* c = components.data() + k * input_dim;
      double s = 0;
      for (std::size_t j = 0; j < input_dim; ++j) s += c[j] * (x[j] - mean[j]);
      out[k] = s;
    }
    return out;
  }

  ItemEmbeddingTable apply(const ItemEmbeddingTable& t) const {
    ItemEmbeddingTable out(t.rows, output_dim);
    for (std::size_t i = 0; i < t.rows; ++i) {
      const auto y = apply(t.row(i));
      for (std::size_t k = 0; k < output_dim; ++k) out.row(i)[k] = static_cast<float>(y[k]);
    }
    return out;
  }

  void save(ad::Checkpoint& ck) const {
    ck.put("pca.mean", ad::Tensor<float>({input_dim}, {mean.begin(), mean.end()}));
    ck.put("pca.components",
           ad::Tensor<float>({output_dim, input_dim}, {components.begin(), components.end()}));
    ck.put("pca.eigenvalues", ad::Tensor<float>({output_dim}, {eigenvalues.begin(), eigenvalues.end()}));
  }

  static PcaTransform load(const ad::Checkpoint& ck) {
    PcaTransform p;
    const auto& c = ck.at("pca.components");
    if (c.rank() != 2) fail("pca.components must be rank 2");
    p.output_dim = c.shape[0];
    p.input_dim = c.shape[1];
    p.components.assign(c.data.begin(), c.data.end());
    const auto& m = ck.at("pca.mean");
    p.mean.assign(m.data.begin(), m.data.end());
    const auto& e = ck.at("pca.eigenvalues");
    p.eigenvalues.assign(e.data.begin(), e.data.end());
    if (p.mean.size() != p.input_dim || p.eigenvalues.size() != p.output_dim)
      fail("pca checkpoint entries disagree on dimensions");
    return p;
  }
};

// Top principal directions of the sample covariance, via SVD of the centered
// table. Each component's first nonzero coordinate is made positive.
inline PcaTransform fit_pca(const ItemEmbeddingTable& table, std::size_t d_pca) {
  const std::size_t n = table.rows, h = table.dim;
  if (n < 2) fail("fit_pca: need at least 2 rows, got ", n);
  if (d_pca == 0 || d_pca > std::min(n - 1, h))
    fail("fit_pca: d_pca=", d_pca, " must be in [1, min(N-1, H)] = [1, ", std::min(n - 1, h), "]");

  PcaTransform p;
  p.input_dim = h;
  p.output_dim = d_pca;
  p.mean.assign(h, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) p.mean[j] += table.row(i)[j];
  for (auto& m : p.mean) m /= static_cast<double>(n);

  Eigen::MatrixXd x(n, h);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) x(i, j) = table.row(i)[j] - p.mean[j];
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const auto& v = svd.matrixV();

  const double tol = std::max(n, h) * std::numeric_limits<double>::epsilon() *
                     (sv.size() > 0 ? sv(0) : 0.0);
  std::size_t rank = 0;
  for (Eigen::Index k = 0; k < sv.size(); ++k)
    if (sv(k) > tol) ++rank;
  if (rank < d_pca)
    warn("fit_pca: requested ", d_pca, " components but the table has numerical rank ", rank,
         "; trailing eigenvalues set to zero");

  p.components.assign(d_pca * h, 0.0);
  p.eigenvalues.assign(d_pca, 0.0);
  for (std::size_t k = 0; k < d_pca; ++k) {
    if (k < rank) p.eigenvalues[k] = sv(k) * sv(k) / static_cast<double>(n - 1);
    double sign = 1.0;
    for (std::size_t j = 0; j < h; ++j)
      if (std::abs(v(j, k)) > 1e-12) {
        sign = v(j, k) > 0 ? 1.0 : -1.0;
        break;
      }
    for (std::size_t j = 0; j < h; ++j) p.components[k * h + j] = sign * v(j, k);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Product quantization

struct PqConfig {
  std::size_t subspaces = 8;   // M
  std::size_t centroids = 0;   // K; 0 = min(256, N/4)
  std::size_t iterations = 25;
  std::size_t restarts = 3;
};

struct PqCodebooks {
  std::size_t subspaces = 0;  // M
  std::size_t centroids = 0;  // K
  std::size_t sub_dim = 0;
  // codebooks[m] is K x sub_dim, row-major.
  std::vector<std::vector<double>> codebooks;
  // N x M codes from the fit.
  std::vector<std::uint32_t> assignments;
  // Final per-subspace quantization error (sum of squared distances).
  std::vector<double> objective;
  // Per-subspace objective after every Lloyd assignment step of the kept
  // restart.
  std::vector<std::vector<double>> history;

  std::size_t dim() const { return subspaces * sub_dim; }
  double total_objective() const {
    double s = 0;
    for (double o : objective) s += o;
    return s;
  }

  std::span<const double> centroid(std::size_t m, std::size_t k) const {
    return {codebooks[m].data() + k * sub_dim, sub_dim};
  }

  // Nearest centroid per subspace; ties go to the lowest index.
  std::vector<std::uint32_t> encode(std::span<const float> x) const {
    if (x.size() != dim()) fail("apply_pq: input has dim ", x.size(), ", expected ", dim());
    std::vector<std::uint32_t> codes(subspaces);
    for (std::size_t m = 0; m < subspaces; ++m) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < centroids; ++k) {
        const auto c = centroid(m, k);
        double d = 0;
        for (std::size_t j = 0; j < sub_dim; ++j) {
          const double diff = x[m * sub_dim + j] - c[j];
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          codes[m] = static_cast<std::uint32_t>(k);
        }
      }
    }
    return codes;
  }

  std::vector<float> apply(std::span<const float> x) const {
    const auto codes = encode(x);
    std::vector<float> out(dim());
    for (std::size_t m = 0; m < subspaces; ++m) {
      const auto c = centroid(m, codes[m]);
      for (std::size_t j = 0; j < sub_dim; ++j) out[m * sub_dim + j] = static_cast<float>(c[j]);
    }
    return out;
  }

  ItemEmbeddingTable apply(const ItemEmbeddingTable& t) const {
    ItemEmbeddingTable out(t.rows, t.dim);
    for (std::size_t i = 0; i < t.rows; ++i) {
      const auto r = apply(t.row(i));
      std::copy(r.begin(), r.end(), out.row(i).begin());
    }
    return out;
  }

  void save(ad::Checkpoint& ck) const {
    for (std::size_t m = 0; m < subspaces; ++m)
      ck.put("pq.codebook." + std::to_string(m),
             ad::Tensor<float>({centroids, sub_dim}, {codebooks[m].begin(), codebooks[m].end()}));
  }

  static PqCodebooks load(const ad::Checkpoint& ck) {
    PqCodebooks pq;
    for (std::size_t m = 0;; ++m) {
      const auto* t = ck.find("pq.codebook." + std::to_string(m));
      if (!t) break;
      if (t->rank() != 2) fail("pq.codebook.", m, " must be rank 2");
      if (m == 0) {
        pq.centroids = t->shape[0];
        pq.sub_dim = t->shape[1];
      } else if (t->shape[0] != pq.centroids || t->shape[1] != pq.sub_dim) {
        fail("pq.codebook.", m, " shape disagrees with pq.codebook.0");
      }
      pq.codebooks.emplace_back(t->data.begin(), t->data.end());
    }
    pq.subspaces = pq.codebooks.size();
    if (pq.subspaces == 0) fail("checkpoint has no pq.codebook.* entries");
    return pq;
  }
};

namespace detail {

struct KMeansRun {
  std::vector<double> centroids;  // K x dim
  std::vector<std::uint32_t> assign;
  std::vector<double> history;
  double objective = 0;
};

inline double sqdist(const double* a, const double* b, std::size_t dim) {
  double d = 0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double diff = a[j] - b[j];
    d += diff * diff;
  }
  return d;
}

// Assigns each point to its nearest centroid (lowest index on ties);
// returns the objective and fills per-point distances.
inline double assign_points(const std::vector<double>& pts, std::size_t n, std::size_t dim,
                            const std::vector<double>& cent, std::size_t k,
                            std::vector<std::uint32_t>& assign, std::vector<double>& dist) {
  double obj = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double d = sqdist(&pts[i * dim], &cent[c * dim], dim);
      if (d < best) {
        best = d;
        arg = static_cast<std::uint32_t>(c);
      }
    }
    assign[i] = arg;
    dist[i] = best;
    obj += best;
  }
  return obj;
}

// k-means++ seeding followed by Lloyd iterations. An empty cluster is
// re-seeded at the point currently farthest from its centroid (lowest index
// on ties), one empty cluster at a time.
inline KMeansRun kmeans(const std::vector<double>& pts, std::size_t n, std::size_t dim,
                        std::size_t k, std::size_t iters, Rng& rng) {
  KMeansRun run;
  run.centroids.assign(k * dim, 0.0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = uniform_index(rng, n);
  std::copy_n(&pts[first * dim], dim, &run.centroids[0]);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sqdist(&pts[i * dim], &run.centroids[(c - 1) * dim], dim));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0) {
      const double u = uniform01(rng) * total;
      double acc = 0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > u) {
          pick = i;
          break;
        }
      }
    } else {
      pick = uniform_index(rng, n);
    }
    std::copy_n(&pts[pick * dim], dim, &run.centroids[c * dim]);
  }

  run.assign.assign(n, 0);
  std::vector<double> dist(n);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < iters; ++it) {
    run.history.push_back(assign_points(pts, n, dim, run.centroids, k, run.assign, dist));
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[run.assign[i]];
      for (std::size_t j = 0; j < dim; ++j) sums[run.assign[i] * dim + j] += pts[i * dim + j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i)
          if (dist[i] > dist[far]) far = i;
        std::copy_n(&pts[far * dim], dim, &run.centroids[c * dim]);
        dist[far] = 0;
        continue;
      }
      for (std::size_t j = 0; j < dim; ++j)
        run.centroids[c * dim + j] = sums[c * dim + j] / static_cast<double>(counts[c]);
    }
  }
  run.objective = assign_points(pts, n, dim, run.centroids, k, run.assign, dist);
  run.history.push_back(run.objective);
  return run;
}

}  // namespace detail

inline std::size_t default_pq_centroids(std::size_t n) {
  return std::max<std::size_t>(1, std::min<std::size_t>(256, n / 4));
}

// Per-subspace k-means. Restart r of subspace m draws from the stream
// derive_seed(seed, "pq", m * 1000 + r); the restart with the lowest final
// objective is kept (earliest on ties).
inline PqCodebooks fit_pq(const ItemEmbeddingTable& table, PqConfig cfg, std::uint64_t seed) {
  const std::size_t n = table.rows, h = table.dim;
  if (cfg.subspaces == 0 || h % cfg.subspaces != 0)
    fail("fit_pq: dim ", h, " is not divisible by M=", cfg.subspaces);
  if (cfg.centroids == 0) cfg.centroids = default_pq_centroids(n);
  if (cfg.centroids > n) fail("fit_pq: K=", cfg.centroids, " exceeds N=", n);
  if (cfg.restarts == 0) cfg.restarts = 1;

  PqCodebooks pq;
  pq.subspaces = cfg.subspaces;
  pq.centroids = cfg.centroids;
  pq.sub_dim = h / cfg.subspaces;
  pq.assignments.assign(n * pq.subspaces, 0);
  std::vector<double> pts(n * pq.sub_dim);
  for (std::size_t m = 0; m < pq.subspaces; ++m) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < pq.sub_dim; ++j)
        pts[i * pq.sub_dim + j] = table.row(i)[m * pq.sub_dim + j];
    std::optional<detail::KMeansRun> best;
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
      Rng rng = make_rng(seed, "pq", m * 1000 + r);
      auto run = detail::kmeans(pts, n, pq.sub_dim, pq.centroids, cfg.iterations, rng);
      if (!best || run.objective < best->objective) best = std::move(run);
    }
    for (std::size_t i = 0; i < n; ++i) pq.assignments[i * pq.subspaces + m] = best->assign[i];
    pq.objective.push_back(best->objective);
    pq.history.push_back(std::move(best->history));
    pq.codebooks.push_back(std::move(best->centroids));
  }
  return pq;
}

// ---------------------------------------------------------------------------
// Trainable heads

enum class Architecture { kPcaOnly, kLinear, kMlp, kPq, kMoe };

inline std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::kPcaOnly: return "pca_only";
    case Architecture::kLinear: return "linear";
    case Architecture::kMlp: return "mlp";
    case Architecture::kPq: return "pq";
    case Architecture::kMoe: return "moe";
  }
  return "?";
}

inline Architecture parse_architecture(std::string_view s) {
  if (s == "pca_only" || s == "pca") return Architecture::kPcaOnly;
  if (s == "linear") return Architecture::kLinear;
  if (s == "mlp") return Architecture::kMlp;
  if (s == "pq") return Architecture::kPq;
  if (s == "moe") return Architecture::kMoe;
  fail("unknown adapter architecture '", s, "' (expected pca_only|linear|mlp|pq|moe)");
}

struct AdapterSpec {
  Architecture architecture = Architecture::kLinear;
  bool use_pca_preprocess = false;
  std::size_t input_dim = 0;
  std::size_t d_pca = 0;  // 0 = default
  std::size_t d = 64;
  std::size_t experts = 8;
  PqConfig pq;

  // 128 when reducing from H >= 512, otherwise H/2.
  static std::size_t default_d_pca(std::size_t h) { return h >= 512 ? 128 : std::max<std::size_t>(1, h / 2); }

  // Fills defaults and checks invariants.
  AdapterSpec resolved() const {
    AdapterSpec s = *this;
    if (s.input_dim == 0) fail("adapter: input_dim must be positive");
    if (s.d == 0) fail("adapter: d must be positive");
    if (s.architecture == Architecture::kPcaOnly) {
      if (s.use_pca_preprocess)
        fail("adapter: pca_only is itself PCA; use_pca_preprocess must be false");
      if (s.d_pca == 0) s.d_pca = s.d;
      if (s.d_pca != s.d)
        fail("adapter: pca_only has no trainable projection, so d (", s.d, ") must equal d_pca (",
             s.d_pca, ")");
    } else if (s.use_pca_preprocess) {
      if (s.d_pca == 0) s.d_pca = default_d_pca(s.input_dim);
      if (s.d_pca >= s.input_dim)
        fail("adapter: PCA pre-processing needs d_pca (", s.d_pca, ") < input_dim (", s.input_dim, ")");
    }
    if (s.architecture == Architecture::kMoe && s.experts == 0)
      fail("adapter: MoE needs at least one expert");
    return s;
  }

  bool has_pca() const { return architecture == Architecture::kPcaOnly || use_pca_preprocess; }
  // Dimension entering the trainable head (after frozen stages).
  std::size_t head_input_dim() const { return has_pca() ? d_pca : input_dim; }
};

template <typename T>
ad::Tensor<T> uniform_init(ad::Shape shape, std::size_t fan_in, Rng& rng) {
  ad::Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
  return t;
}

// Registers the trainable head's parameters under "adapter.". Weights are
// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.
template <typename T>
void make_trainable_adapter(const AdapterSpec& spec, ad::ParameterSet<T>& params, Rng& rng) {
  const std::size_t in = spec.head_input_dim(), d = spec.d;
  switch (spec.architecture) {
    case Architecture::kPcaOnly:
      return;
    case Architecture::kLinear:
    case Architecture::kPq:
      params.add("adapter.linear.weight", uniform_init<T>({in, d}, in, rng));
      params.add("adapter.linear.bias", ad::Tensor<T>({d}));
      return;
    case Architecture::kMlp:
      params.add("adapter.mlp.0.weight", uniform_init<T>({in, d}, in, rng));
      params.add("adapter.mlp.0.bias", ad::Tensor<T>({d}));
      params.add("adapter.mlp.1.weight", uniform_init<T>({d, d}, d, rng));
      params.add("adapter.mlp.1.bias", ad::Tensor<T>({d}));
      return;
    case Architecture::kMoe: {
      const std::size_t e = spec.experts;
      // Expert e occupies columns [e*d, (e+1)*d) of the fused weight.
      params.add("adapter.moe.experts.weight", uniform_init<T>({in, e * d}, in, rng));
      params.add("adapter.moe.experts.bias", ad::Tensor<T>({e * d}));
      params.add("adapter.moe.gate.weight", uniform_init<T>({in, e}, in, rng));
      params.add("adapter.moe.gate.bias", ad::Tensor<T>({e}));
      return;
    }
  }
}

// Softmax gate weights [N, E] for a batch of inputs.
template <typename T>
ad::Var<T> moe_gate(ad::Var<T> x, ad::ParameterSet<T>& params) {
  ad::Tape<T>& t = *x.tape;
  return ad::softmax(ad::add(ad::matmul(x, t.param(params.at("adapter.moe.gate.weight"))),
                             t.param(params.at("adapter.moe.gate.bias"))),
                     -1);
}

// Dense mixture: out = sum_e gate_e(x) * (x W_e + b_e).
template <typename T>
ad::Var<T> moe_forward(ad::Var<T> x, ad::ParameterSet<T>& params, std::size_t experts) {
  ad::Tape<T>& t = *x.tape;
  const std::size_t n = x.shape()[0];
  auto expert_out = ad::add(ad::matmul(x, t.param(params.at("adapter.moe.experts.weight"))),
                            t.param(params.at("adapter.moe.experts.bias")));  // [N, E*d]
  const std::size_t d = expert_out.shape()[1] / experts;
  auto gate = moe_gate(x, params);                                            // [N, E]
  auto mixed = ad::matmul(ad::reshape(gate, {n, 1, experts}),
                          ad::reshape(expert_out, {n, experts, d}));          // [N, 1, d]
  return ad::reshape(mixed, {n, d});
}

// Applies the trainable head to frozen features x [N, head_input_dim].
template <typename T>
ad::Var<T> adapter_forward(const AdapterSpec& spec, ad::Var<T> x, ad::ParameterSet<T>& params) {
  ad::Tape<T>& t = *x.tape;
  switch (spec.architecture) {
    case Architecture::kPcaOnly:
      return x;
    case Architecture::kLinear:
    case Architecture::kPq:
      return ad::add(ad::matmul(x, t.param(params.at("adapter.linear.weight"))),
                     t.param(params.at("adapter.linear.bias")));
    case Architecture::kMlp: {
      auto h = ad::relu(ad::add(ad::matmul(x, t.param(params.at("adapter.mlp.0.weight"))),
                                t.param(params.at("adapter.mlp.0.bias"))));
      return ad::add(ad::matmul(h, t.param(params.at("adapter.mlp.1.weight"))),
                     t.param(params.at("adapter.mlp.1.bias")));
    }
    case Architecture::kMoe:
      return moe_forward(x, params, spec.experts);
  }
  fail("unreachable adapter architecture");
}

// ---------------------------------------------------------------------------
// Frozen stages + head.

class AdapterPipeline {
 public:
  AdapterPipeline() = default;

  // Fits the frozen stages on `table`. PQ, when used with PCA
  // pre-processing, quantizes the PCA output.
  static AdapterPipeline fit(const AdapterSpec& spec_in, const ItemEmbeddingTable& table,
                             std::uint64_t seed) {
    AdapterSpec spec = spec_in;
    spec.input_dim = table.dim;
    AdapterPipeline p;
    p.spec_ = spec.resolved();
    ItemEmbeddingTable cur = table;
    if (p.spec_.has_pca()) {
      p.pca_ = fit_pca(cur, p.spec_.d_pca);
      cur = p.pca_->apply(cur);
    }
    if (p.spec_.architecture == Architecture::kPq) {
      p.pq_ = fit_pq(cur, p.spec_.pq, seed);
      cur = p.pq_->apply(cur);
    }
    return p;
  }

  // Rebuilds from persisted frozen stages.
  static AdapterPipeline restore(const AdapterSpec& spec, const ad::Checkpoint& ck) {
    AdapterPipeline p;
    p.spec_ = spec.resolved();
    if (p.spec_.has_pca()) p.pca_ = PcaTransform::load(ck);
    if (p.spec_.architecture == Architecture::kPq) p.pq_ = PqCodebooks::load(ck);
    return p;
  }

  const AdapterSpec& spec() const { return spec_; }
  const std::optional<PcaTransform>& pca() const { return pca_; }
  const std::optional<PqCodebooks>& pq() const { return pq_; }

  void save_frozen(ad::Checkpoint& ck) const {
    if (pca_) pca_->save(ck);
    if (pq_) pq_->save(ck);
  }

  // Output of the frozen stages: the constant input to the trainable head.
  ItemEmbeddingTable frozen_features(const ItemEmbeddingTable& table) const {
    if (table.dim != spec_.input_dim)
      fail("adapter: table dim ", table.dim, " does not match input_dim ", spec_.input_dim);
    ItemEmbeddingTable cur = table;
    if (pca_) cur = pca_->apply(cur);
    if (pq_) cur = pq_->apply(cur);
    return cur;
  }

  template <typename T>
  void init_head(ad::ParameterSet<T>& params, Rng& rng) const {
    make_trainable_adapter(spec_, params, rng);
  }

  template <typename T>
  ad::Var<T> forward(ad::Var<T> features, ad::ParameterSet<T>& params) const {
    return adapter_forward(spec_, features, params);
  }

  std::size_t output_dim() const { return spec_.d; }

 private:
  AdapterSpec spec_;
  std::optional<PcaTransform> pca_;
  std::optional<PqCodebooks> pq_;
};

// Frozen features as a [N, dim] tensor.
template <typename T>
ad::Tensor<T> to_tensor(const ItemEmbeddingTable& t) {
  return ad::Tensor<T>({t.rows, t.dim}, std::vector<T>(t.values.begin(), t.values.end()));
}

}  // namespace featrec
