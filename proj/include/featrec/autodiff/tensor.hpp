// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "featrec/common.hpp"

namespace featrec::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline void check_shape(const Shape& s, std::string_view what) {
  if (s.empty() || s.size() > 3) fail(what, ": rank must be 1..3, got ", shape_str(s));
  for (auto d : s)
    if (d == 0) fail(what, ": zero-sized dimension in ", shape_str(s));
}

// Dense row-major tensor of rank 1..3. A scalar is shape [1].
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {
    check_shape(shape, "tensor");
  }
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    check_shape(shape, "tensor");
    if (data.size() != numel(shape))
      fail("tensor: ", data.size(), " values do not fill shape ", shape_str(shape));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }
  std::size_t last_dim() const { return shape.back(); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }
};

// A named tensor with its gradient buffer. Frozen parameters never receive
// gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  bool grad_fresh = false;

  void zero_grad() {
    std::fill(grad.data.begin(), grad.data.end(), T(0));
    grad_fresh = false;
  }
};

// Ordered registry of parameters with stable addresses.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value, bool trainable = true) {
    if (find(name)) fail("parameter '", name, "' registered twice");
    auto p = std::make_unique<Parameter<T>>();
    p->name = std::move(name);
    p->grad = Tensor<T>(value.shape);
    p->value = std::move(value);
    p->trainable = trainable;
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>* find(std::string_view name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Parameter<T>* find(std::string_view name) const {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  Parameter<T>& at(std::string_view name) {
    auto* p = find(name);
    if (!p) fail("no parameter named '", name, "'");
    return *p;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (!trainable_only || p->trainable) n += p->value.size();
    return n;
  }
  std::size_t count_prefix(std::string_view prefix) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p->name.starts_with(prefix)) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

}  // namespace featrec::ad
