// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "featrec/autodiff/tensor.hpp"

namespace featrec::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

// Adam with bias correction. Gradients are consumed (zeroed) by step().
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }

  void step(ParameterSet<T>& params) {
    bool any_fresh = false;
    for (auto& p : params) any_fresh |= p->trainable && p->grad_fresh;
    if (!any_fresh) fail("adam: no fresh gradients (backward not run since the last step)");
    if (m_.size() != params.size()) {
      m_.resize(params.size());
      v_.resize(params.size());
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto& p = params[pi];
      if (!p.trainable) continue;
      auto& m = m_[pi];
      auto& v = v_[pi];
      if (m.size() != p.value.size()) {
        m.assign(p.value.size(), 0.0);
        v.assign(p.value.size(), 0.0);
      }
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double g = p.grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p.value[i] = static_cast<T>(p.value[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
      p.zero_grad();
    }
  }

  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace featrec::ad
