// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense tensors.
//
// Every op appends one node to the tape holding its forward value and, when
// any input requires gradient, a closure that maps the node's output
// gradient to its inputs' gradients. backward() walks the nodes in exact
// reverse order of creation; fan-out accumulates additively. All kernels
// reduce sequentially in a fixed order, so results are bit-reproducible.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "featrec/autodiff/tensor.hpp"
#include "featrec/common.hpp"

namespace featrec::ad {

template <typename T>
class Tape;

// Handle to a tape node.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  T item() const { return value().data.at(0); }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Non-finite forward values raise immediately when enabled. Defaults on in
  // debug builds.
#ifdef NDEBUG
  bool check_finite = false;
#else
  bool check_finite = true;
#endif
  // When false, ops record values only (inference).
  bool recording = true;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, "constant"); }

  Var<T> param(Parameter<T>& p) {
    const bool needs = p.trainable && recording;
    Var<T> v = push(p.value, needs, nullptr, "param");
    if (needs) nodes_[v.id].param = &p;
    return v;
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) fail("backward: loss is not on this tape");
    if (backward_done_) fail("backward: already called on this tape; reset() first");
    if (loss.size() != 1) fail("backward: loss must be scalar, got ", shape_str(loss.shape()));
    backward_done_ = true;
    if (!nodes_[loss.id].needs_grad) return;
    grad(loss.id).assign(1, T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        auto& g = n.param->grad.data;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
        n.param->grad_fresh = true;
      }
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  // Gradient buffer of a node, zero-initialized on first use.
  std::vector<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }

  // Appends a node. `backward` is dropped when no input needs gradient.
  Var<T> push(Tensor<T> value, bool needs_grad, BackwardFn backward, const char* op) {
    if (check_finite)
      for (const T& v : value.data)
        if (!std::isfinite(v)) fail(op, ": produced a non-finite value");
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad && recording;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// GEMM kernels: C[m,n] += op(A) * op(B), row-major.

namespace kernel {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

// C += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  Map<T>(c, m, n).noalias() += CMap<T>(a, m, k) * CMap<T>(b, k, n);
}

// C += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  Map<T>(c, m, n).noalias() += CMap<T>(a, m, k) * CMap<T>(b, n, k).transpose();
}

// C += A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  Map<T>(c, m, n).noalias() += CMap<T>(a, k, m).transpose() * CMap<T>(b, k, n);
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Ops.

namespace detail {

template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.tape != b.tape || !a.tape) fail(op, ": operands live on different tapes");
  return *a.tape;
}

// b broadcasts against a when shapes are equal, b's shape is a suffix of
// a's shape (repetition over leading dims), or b is a scalar.
inline bool is_suffix(const Shape& a, const Shape& b) {
  if (b == Shape{1}) return true;
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

inline std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) fail(op, ": axis ", axis, " out of range for rank ", rank);
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// (outer, len, inner) decomposition around an axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};
inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

enum class Binary { kAdd, kSub, kMul };

template <typename T>
Var<T> binary(Var<T> a, Var<T> b, Binary kind, const char* op) {
  Tape<T>& tape = same_tape(a, b, op);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (!is_suffix(av.shape, bv.shape))
    fail(op, ": shape mismatch ", shape_str(av.shape), " vs ", shape_str(bv.shape));
  Tensor<T> out(av.shape);
  const std::size_t nb = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i], y = bv[i % nb];
    out[i] = kind == Binary::kAdd ? x + y : kind == Binary::kSub ? x - y : x * y;
  }
  const std::size_t ia = a.id, ib = b.id;
  const bool needs = tape.needs_grad(ia) || tape.needs_grad(ib);
  return tape.push(std::move(out), needs,
                   [ia, ib, kind, nb](Tape<T>& t, const std::vector<T>& g) {
                     const std::size_t n = g.size();
                     if (t.needs_grad(ia)) {
                       auto& ga = t.grad(ia);
                       if (kind == Binary::kMul) {
                         const auto& bv = t.value(ib).data;
                         for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i % nb];
                       } else {
                         for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                       }
                     }
                     if (t.needs_grad(ib)) {
                       auto& gb = t.grad(ib);
                       if (kind == Binary::kMul) {
                         const auto& av = t.value(ia).data;
                         for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * av[i];
                       } else if (kind == Binary::kSub) {
                         for (std::size_t i = 0; i < n; ++i) gb[i % nb] -= g[i];
                       } else {
                         for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i];
                       }
                     }
                   },
                   op);
}

template <typename T, typename F, typename D>
Var<T> unary(Var<T> x, F forward, D derivative, const char* op) {
  Tape<T>& tape = *x.tape;
  const auto& xv = x.value();
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(xv[i]);
  const std::size_t ix = x.id;
  const std::size_t self = tape.size();
  return tape.push(std::move(out), tape.needs_grad(ix),
                   [ix, self, derivative](Tape<T>& t, const std::vector<T>& g) {
                     const auto& xv = t.value(ix).data;
                     const auto& yv = t.value(self).data;
                     auto& gx = t.grad(ix);
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xv[i], yv[i]);
                   },
                   op);
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) { return detail::binary(a, b, detail::Binary::kAdd, "add"); }
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) { return detail::binary(a, b, detail::Binary::kSub, "sub"); }
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) { return detail::binary(a, b, detail::Binary::kMul, "mul"); }

template <typename T>
Var<T> scale(Var<T> x, T s) {
  return detail::unary(
      x, [s](T v) { return v * s; }, [s](T, T) { return s; }, "scale");
}

template <typename T>
Var<T> relu(Var<T> x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); },
      "relu");
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary(
      x,
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

template <typename T>
Var<T> log(Var<T> x) {
  for (const T& v : x.value().data)
    if (!(v > T(0))) fail("log: non-positive input ", v);
  return detail::unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; }, "log");
}

// log(sigmoid(x)) without overflow for large |x|.
template <typename T>
Var<T> log_sigmoid(Var<T> x) {
  return detail::unary(
      x,
      [](T v) { return v >= T(0) ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v)); },
      [](T v, T) {
        return v >= T(0) ? std::exp(-v) / (T(1) + std::exp(-v)) : T(1) / (T(1) + std::exp(v));
      },
      "log_sigmoid");
}

// out[..., m, n] = a[..., m, k] * b[k, n] (b shared across the batch) or
// a[B, m, k] * b[B, k, n]. With transpose_b, b is given as [.., n, k].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b = false) {
  Tape<T>& tape = detail::same_tape(a, b, "matmul");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() < 2 || bv.rank() < 2 || bv.rank() > av.rank())
    fail("matmul: unsupported ranks ", shape_str(av.shape), " x ", shape_str(bv.shape));
  const bool batched = bv.rank() == 3;
  const std::size_t k = av.last_dim();
  const std::size_t bk = transpose_b ? bv.shape[bv.rank() - 1] : bv.shape[bv.rank() - 2];
  const std::size_t n = transpose_b ? bv.shape[bv.rank() - 2] : bv.shape[bv.rank() - 1];
  if (bk != k || (batched && bv.shape[0] != av.shape[0]))
    fail("matmul: shape mismatch ", shape_str(av.shape), " x ", shape_str(bv.shape),
         transpose_b ? "^T" : "");
  const std::size_t batches = batched ? av.shape[0] : 1;
  const std::size_t m = av.size() / (k * batches);
  Shape os = av.shape;
  os.back() = n;
  Tensor<T> out(os);
  for (std::size_t bi = 0; bi < batches; ++bi) {
    const T* ap = av.data.data() + bi * m * k;
    const T* bp = bv.data.data() + (batched ? bi * k * n : 0);
    T* cp = out.data.data() + bi * m * n;
    if (transpose_b)
      kernel::gemm_nt(m, n, k, ap, bp, cp);
    else
      kernel::gemm_nn(m, n, k, ap, bp, cp);
  }
  const std::size_t ia = a.id, ib = b.id;
  const bool needs = tape.needs_grad(ia) || tape.needs_grad(ib);
  return tape.push(
      std::move(out), needs,
      [=](Tape<T>& t, const std::vector<T>& g) {
        const auto& A = t.value(ia).data;
        const auto& B = t.value(ib).data;
        const bool ga_need = t.needs_grad(ia), gb_need = t.needs_grad(ib);
        T* ga = ga_need ? t.grad(ia).data() : nullptr;
        T* gb = gb_need ? t.grad(ib).data() : nullptr;
        for (std::size_t bi = 0; bi < batches; ++bi) {
          const T* ap = A.data() + bi * m * k;
          const T* bp = B.data() + (batched ? bi * k * n : 0);
          const T* gp = g.data() + bi * m * n;
          if (ga) {
            // dA = dC * B^T  (or dC * B when B was given transposed)
            if (transpose_b)
              kernel::gemm_nn(m, k, n, gp, bp, ga + bi * m * k);
            else
              kernel::gemm_nt(m, k, n, gp, bp, ga + bi * m * k);
          }
          if (gb) {
            T* gbp = gb + (batched ? bi * k * n : 0);
            // dB = A^T * dC  (or dC^T * A)
            if (transpose_b)
              kernel::gemm_tn(n, k, m, gp, ap, gbp);
            else
              kernel::gemm_tn(k, n, m, ap, gp, gbp);
          }
        }
      },
      "matmul");
}

template <typename T>
Var<T> softmax(Var<T> x, int axis = -1) {
  Tape<T>& tape = *x.tape;
  const auto& xv = x.value();
  const auto ax = detail::norm_axis(axis, xv.rank(), "softmax");
  const auto sp = detail::split_axis(xv.shape, ax);
  Tensor<T> out(xv.shape);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      T mx = xv[base];
      for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, xv[base + l * sp.inner]);
      T sum = 0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const T e = std::exp(xv[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        sum += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= sum;
    }
  const std::size_t ix = x.id, self = tape.size();
  return tape.push(std::move(out), tape.needs_grad(ix),
                   [ix, self, sp](Tape<T>& t, const std::vector<T>& g) {
                     const auto& y = t.value(self).data;
                     auto& gx = t.grad(ix);
                     for (std::size_t o = 0; o < sp.outer; ++o)
                       for (std::size_t in = 0; in < sp.inner; ++in) {
                         const std::size_t base = o * sp.len * sp.inner + in;
                         T dot = 0;
                         for (std::size_t l = 0; l < sp.len; ++l) {
                           const auto i = base + l * sp.inner;
                           dot += g[i] * y[i];
                         }
                         for (std::size_t l = 0; l < sp.len; ++l) {
                           const auto i = base + l * sp.inner;
                           gx[i] += y[i] * (g[i] - dot);
                         }
                       }
                   },
                   "softmax");
}

// Row-wise log-softmax over the last axis.
template <typename T>
Var<T> log_softmax(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const auto& xv = x.value();
  const std::size_t c = xv.last_dim(), rows = xv.size() / c;
  Tensor<T> out(xv.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data.data() + r * c;
    const T mx = *std::max_element(xr, xr + c);
    double sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(xr[j] - mx));
    const T lse = mx + static_cast<T>(std::log(sum));
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xr[j] - lse;
  }
  const std::size_t ix = x.id, self = tape.size();
  return tape.push(std::move(out), tape.needs_grad(ix),
                   [ix, self, rows, c](Tape<T>& t, const std::vector<T>& g) {
                     const auto& y = t.value(self).data;
                     auto& gx = t.grad(ix);
                     for (std::size_t r = 0; r < rows; ++r) {
                       T gs = 0;
                       for (std::size_t j = 0; j < c; ++j) gs += g[r * c + j];
                       for (std::size_t j = 0; j < c; ++j)
                         gx[r * c + j] += g[r * c + j] - std::exp(y[r * c + j]) * gs;
                     }
                   },
                   "log_softmax");
}

// out[r] = x[r, index[r]] for a [R, C] input.
template <typename T>
Var<T> pick(Var<T> x, std::vector<std::uint32_t> index) {
  Tape<T>& tape = *x.tape;
  const auto& xv = x.value();
  if (xv.rank() != 2 || index.size() != xv.shape[0])
    fail("pick: expected [R,C] input with R indices, got ", shape_str(xv.shape), " and ",
         index.size());
  const std::size_t c = xv.shape[1];
  Tensor<T> out(Shape{index.size()});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= c) fail("pick: index ", index[r], " out of range ", c);
    out[r] = xv[r * c + index[r]];
  }
  const std::size_t ix = x.id;
  return tape.push(std::move(out), tape.needs_grad(ix),
                   [ix, c, index = std::move(index)](Tape<T>& t, const std::vector<T>& g) {
                     auto& gx = t.grad(ix);
                     for (std::size_t r = 0; r < index.size(); ++r) gx[r * c + index[r]] += g[r];
                   },
                   "pick");
}

// Normalizes over the last axis, then applies per-feature gain and bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  Tape<T>& tape = *x.tape;
  const auto& xv = x.value();
  const std::size_t d = xv.last_dim(), rows = xv.size() / d;
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    fail("layer_norm: gain/bias must be [", d, "], got ", shape_str(gain.shape()), " and ",
         shape_str(bias.shape()));
  const auto& gv = gain.value().data;
  const auto& bv = bias.value().data;
  Tensor<T> out(xv.shape);
  std::vector<T> xhat(xv.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data.data() + r * d;
    double mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const T rs = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = static_cast<T>(xr[j] - mean) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  const bool needs = tape.needs_grad(ix) || tape.needs_grad(ig) || tape.needs_grad(ib);
  return tape.push(
      std::move(out), needs,
      [=, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, const std::vector<T>& g) {
        const auto& gv = t.value(ig).data;
        if (t.needs_grad(ig)) {
          auto& gg = t.grad(ig);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (t.needs_grad(ib)) {
          auto& gb = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (t.needs_grad(ix)) {
          auto& gx = t.grad(ix);
          std::vector<T> dxh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dxh[j] = g[r * d + j] * gv[j];
              m1 += dxh[j];
              m2 += dxh[j] * xhat[r * d + j];
            }
            m1 /= static_cast<T>(d);
            m2 /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j)
              gx[r * d + j] += rstd[r] * (dxh[j] - m1 - xhat[r * d + j] * m2);
          }
        }
      },
      "layer_norm");
}

// Inverted dropout: kept units are scaled by 1/(1-rate). Rate 0 returns x.
template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) fail("dropout: rate ", rate, " outside [0,1)");
  if (rate == 0.0) return x;
  Tape<T>& tape = *x.tape;
  const auto& xv = x.value();
  std::vector<T> mask(xv.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask) m = uniform01(rng) < rate ? T(0) : keep_scale;
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  const std::size_t ix = x.id;
  return tape.push(std::move(out), tape.needs_grad(ix),
                   [ix, mask = std::move(mask)](Tape<T>& t, const std::vector<T>& g) {
                     auto& gx = t.grad(ix);
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                   },
                   "dropout");
}

// Gathers rows of a [V, d] table; `prefix` gives the output's leading shape.
template <typename T>
Var<T> embedding_lookup(Var<T> table, std::vector<std::uint32_t> indices, Shape prefix) {
  Tape<T>& tape = *table.tape;
  const auto& tv = table.value();
  if (tv.rank() != 2) fail("embedding_lookup: table must be [V,d], got ", shape_str(tv.shape));
  if (numel(prefix) != indices.size())
    fail("embedding_lookup: ", indices.size(), " indices for prefix ", shape_str(prefix));
  const std::size_t v = tv.shape[0], d = tv.shape[1];
  Shape os = prefix;
  os.push_back(d);
  Tensor<T> out(os);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= v) fail("embedding_lookup: id ", indices[i], " out of range [0,", v, ")");
    std::copy_n(tv.data.data() + std::size_t{indices[i]} * d, d, out.data.data() + i * d);
  }
  const std::size_t it = table.id;
  return tape.push(std::move(out), tape.needs_grad(it),
                   [it, d, indices = std::move(indices)](Tape<T>& t, const std::vector<T>& g) {
                     auto& gt = t.grad(it);
                     for (std::size_t i = 0; i < indices.size(); ++i) {
                       T* row = gt.data() + std::size_t{indices[i]} * d;
                       for (std::size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
                     }
                   },
                   "embedding_lookup");
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) fail("concat: no inputs");
  Tape<T>& tape = *xs[0].tape;
  const Shape& s0 = xs[0].shape();
  const auto ax = detail::norm_axis(axis, s0.size(), "concat");
  Shape os = s0;
  os[ax] = 0;
  std::vector<std::size_t> chunk;
  for (const auto& x : xs) {
    const auto& s = x.shape();
    if (x.tape != &tape) fail("concat: operands live on different tapes");
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == s0[i];
    if (!ok) fail("concat: shape mismatch ", shape_str(s0), " vs ", shape_str(s));
    os[ax] += s[ax];
  }
  const auto sp = detail::split_axis(os, ax);
  for (const auto& x : xs) chunk.push_back(x.shape()[ax] * sp.inner);
  Tensor<T> out(os);
  const std::size_t row = sp.len * sp.inner;
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& xv = xs[k].value().data;
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(xv.data() + o * chunk[k], chunk[k], out.data.data() + o * row + off);
    off += chunk[k];
  }
  std::vector<std::size_t> ids;
  bool needs = false;
  for (const auto& x : xs) {
    ids.push_back(x.id);
    needs |= tape.needs_grad(x.id);
  }
  return tape.push(std::move(out), needs,
                   [ids, chunk, row, outer = sp.outer](Tape<T>& t, const std::vector<T>& g) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < ids.size(); ++k) {
                       if (t.needs_grad(ids[k])) {
                         auto& gx = t.grad(ids[k]);
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t j = 0; j < chunk[k]; ++j)
                             gx[o * chunk[k] + j] += g[o * row + off + j];
                       }
                       off += chunk[k];
                     }
                   },
                   "concat");
}

// Columns [begin, begin+len) of the last axis.
template <typename T>
Var<T> slice_last(Var<T> x, std::size_t begin, std::size_t len) {
  Tape<T>& tape = *x.tape;
  const auto& xv = x.value();
  const std::size_t d = xv.last_dim(), rows = xv.size() / d;
  if (len == 0 || begin + len > d)
    fail("slice_last: [", begin, ",", begin + len, ") out of range for last dim ", d);
  Shape os = xv.shape;
  os.back() = len;
  Tensor<T> out(os);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.data.data() + r * d + begin, len, out.data.data() + r * len);
  const std::size_t ix = x.id;
  return tape.push(std::move(out), tape.needs_grad(ix),
                   [ix, d, rows, begin, len](Tape<T>& t, const std::vector<T>& g) {
                     auto& gx = t.grad(ix);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < len; ++j) gx[r * d + begin + j] += g[r * len + j];
                   },
                   "slice_last");
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tape<T>& tape = *x.tape;
  if (numel(shape) != x.size())
    fail("reshape: ", shape_str(x.shape()), " cannot become ", shape_str(shape));
  Tensor<T> out(std::move(shape), x.value().data);
  const std::size_t ix = x.id;
  return tape.push(std::move(out), tape.needs_grad(ix),
                   [ix](Tape<T>& t, const std::vector<T>& g) {
                     auto& gx = t.grad(ix);
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                   },
                   "reshape");
}

// Full reduction to a scalar, accumulated in double.
template <typename T>
Var<T> sum(Var<T> x) {
  Tape<T>& tape = *x.tape;
  double s = 0;
  for (const T& v : x.value().data) s += v;
  const std::size_t ix = x.id;
  return tape.push(Tensor<T>(Shape{1}, std::vector<T>{static_cast<T>(s)}), tape.needs_grad(ix),
                   [ix](Tape<T>& t, const std::vector<T>& g) {
                     auto& gx = t.grad(ix);
                     for (auto& v : gx) v += g[0];
                   },
                   "sum");
}

template <typename T>
Var<T> mean(Var<T> x) {
  Tape<T>& tape = *x.tape;
  double s = 0;
  for (const T& v : x.value().data) s += v;
  const std::size_t n = x.size(), ix = x.id;
  return tape.push(Tensor<T>(Shape{1}, std::vector<T>{static_cast<T>(s / double(n))}),
                   tape.needs_grad(ix),
                   [ix, n](Tape<T>& t, const std::vector<T>& g) {
                     auto& gx = t.grad(ix);
                     const T w = g[0] / static_cast<T>(n);
                     for (auto& v : gx) v += w;
                   },
                   "mean");
}

// Sum over one axis, dropping it (rank-1 input gives shape [1]).
template <typename T>
Var<T> sum_axis(Var<T> x, int axis = -1) {
  Tape<T>& tape = *x.tape;
  const auto& xv = x.value();
  const auto ax = detail::norm_axis(axis, xv.rank(), "sum_axis");
  const auto sp = detail::split_axis(xv.shape, ax);
  Shape os;
  for (std::size_t i = 0; i < xv.rank(); ++i)
    if (i != ax) os.push_back(xv.shape[i]);
  if (os.empty()) os.push_back(1);
  Tensor<T> out(os);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t in = 0; in < sp.inner; ++in)
        out[o * sp.inner + in] += xv[(o * sp.len + l) * sp.inner + in];
  const std::size_t ix = x.id;
  return tape.push(std::move(out), tape.needs_grad(ix),
                   [ix, sp](Tape<T>& t, const std::vector<T>& g) {
                     auto& gx = t.grad(ix);
                     for (std::size_t o = 0; o < sp.outer; ++o)
                       for (std::size_t l = 0; l < sp.len; ++l)
                         for (std::size_t in = 0; in < sp.inner; ++in)
                           gx[(o * sp.len + l) * sp.inner + in] += g[o * sp.inner + in];
                   },
                   "sum_axis");
}

}  // namespace featrec::ad
