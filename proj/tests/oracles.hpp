// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations shared by the unit tests and the
// acceptance gate. None of them call into the library's numerics.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "featrec/common.hpp"
#include "featrec/embedding_io.hpp"

namespace featrec::testing {

// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
// eigenvalues in descending order.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-22) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i * n + i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

inline std::vector<double> covariance(const ItemEmbeddingTable& t) {
  const std::size_t n = t.rows, h = t.dim;
  std::vector<double> mean(h, 0.0), cov(h * h, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) mean[j] += t.row(i)[j] / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < h; ++a)
      for (std::size_t b = 0; b < h; ++b)
        cov[a * h + b] += (t.row(i)[a] - mean[a]) * (t.row(i)[b] - mean[b]) / static_cast<double>(n - 1);
  return cov;
}

// Independent k-means++ / Lloyd, consuming the same random streams.
struct OracleKMeans {
  std::vector<double> cent;
  double objective;
};

inline OracleKMeans oracle_kmeans(const std::vector<std::vector<double>>& pts, std::size_t k,
                           std::size_t iters, Rng rng) {
  const std::size_t n = pts.size(), dim = pts[0].size();
  auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t j = 0; j < dim; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
  };
  std::vector<std::vector<double>> c{pts[uniform_index(rng, n)]};
  while (c.size() < k) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = std::numeric_limits<double>::infinity();
      for (const auto& cc : c) w[i] = std::min(w[i], dist2(pts[i], cc));
    }
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (total <= 0) {
      c.push_back(pts[uniform_index(rng, n)]);
      continue;
    }
    const double u = uniform01(rng) * total;
    std::size_t pick = n - 1;
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i)
      if ((acc += w[i]) > u) {
        pick = i;
        break;
      }
    c.push_back(pts[pick]);
  }
  auto nearest = [&](const std::vector<double>& x) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (dist2(x, c[j]) < dist2(x, c[arg])) arg = j;
    return arg;
  };
  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < n; ++i) members[nearest(pts[i])].push_back(i);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = dist2(pts[i], c[nearest(pts[i])]);
    for (std::size_t j = 0; j < k; ++j) {
      if (members[j].empty()) {
        const auto far = static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
        c[j] = pts[far];
        d[far] = 0;
        continue;
      }
      std::vector<double> m(dim, 0.0);
      for (auto i : members[j])
        for (std::size_t q = 0; q < dim; ++q) m[q] += pts[i][q];
      for (auto& v : m) v /= static_cast<double>(members[j].size());
      c[j] = m;
    }
  }
  OracleKMeans out{{}, 0.0};
  for (const auto& cc : c) out.cent.insert(out.cent.end(), cc.begin(), cc.end());
  for (const auto& x : pts) out.objective += dist2(x, c[nearest(x)]);
  return out;
}

}  // namespace featrec::testing
