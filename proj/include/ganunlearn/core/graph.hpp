#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <set>
#include <vector>

#include "ganunlearn/core/tensor.hpp"

namespace gu {

// Eager reverse-mode tape. Ops compute their forward value immediately and
// record a closure that scatters the output gradient into parent gradients,
// so control flow on computed values (flat-spot guards, adaptive layer
// selection) needs no special graph machinery. One Graph instance is built
// per training step and cleared afterwards.
//
// Gradients only flow into nodes whose `needs` flag is set; frozen networks
// bind their parameters with needs=false and their whole subgraph skips
// backward closures and cached intermediates.
template <class T>
class Graph {
 public:
  struct Node {
    Tensor<T> owned;                     // storage for computed values and owned constants
    const Tensor<T>* external = nullptr; // leaf nodes alias caller storage instead
    Tensor<T> grad;
    bool has_grad = false;
    bool needs = false;
    Tensor<T>* sink = nullptr;      // leaf gradient accumulator (parameter .grad)
    std::shared_ptr<void> stash;    // op-private cache for the backward pass
    std::function<void(Graph&, int)> back;
  };

  std::vector<Node> nodes;
  bool recording = true;  // false: forward-only, no closures, no stashes

  void clear() { nodes.clear(); }

  const Tensor<T>& val(int i) const {
    const Node& n = nodes[size_t(i)];
    return n.external ? *n.external : n.owned;
  }
  bool needs(int i) const { return nodes[size_t(i)].needs; }

  Tensor<T>& grad(int i) {
    Node& n = nodes[size_t(i)];
    if (!n.has_grad) {
      n.grad = Tensor<T>::zeros(val(i).shape);
      n.has_grad = true;
    }
    return n.grad;
  }

  int leaf(const Tensor<T>* value, Tensor<T>* grad_sink, bool needs_grad) {
    Node n;
    n.external = value;
    n.sink = grad_sink;
    n.needs = needs_grad && recording;
    nodes.push_back(std::move(n));
    return int(nodes.size()) - 1;
  }

  int constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    nodes.push_back(std::move(n));
    return int(nodes.size()) - 1;
  }

  int computed(Tensor<T> value, bool needs_grad, std::function<void(Graph&, int)> back_fn,
               std::shared_ptr<void> stash = nullptr) {
    Node n;
    n.owned = std::move(value);
    n.needs = needs_grad && recording;
    if (n.needs) {
      n.back = std::move(back_fn);
      n.stash = std::move(stash);
    }
    nodes.push_back(std::move(n));
    return int(nodes.size()) - 1;
  }

  // Accumulates d(root)/d(leaf) into every reachable leaf's grad sink.
  // root must be a scalar.
  void backward(int root) {
    if (val(root).numel() != 1) throw StateError("backward root must be scalar");
    grad(root)[0] += T(1);
    for (int i = root; i >= 0; --i) {
      Node& n = nodes[size_t(i)];
      if (!n.has_grad || !n.needs) continue;
      if (n.back) {
        n.back(*this, i);
      } else if (n.sink) {
        if (!n.sink->same_shape(n.grad)) throw StateError("gradient sink shape mismatch");
        for (int64_t k = 0; k < n.grad.numel(); ++k) (*n.sink)[k] += n.grad[k];
      }
    }
  }
};

template <class T>
struct Var {
  Graph<T>* g = nullptr;
  int id = -1;
  const Tensor<T>& value() const { return g->val(id); }
};

namespace detail {
template <class T>
bool any_needs(Graph<T>& g, std::initializer_list<int> ids) {
  for (int i : ids)
    if (g.needs(i)) return true;
  return false;
}
template <class T>
void axpy(Tensor<T>& dst, const Tensor<T>& src, T a) {
  for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += a * src[i];
}
}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and scalar ops

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  if (!a.value().same_shape(b.value())) throw StateError("add: shape mismatch");
  Tensor<T> y = a.value();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  bool needs = detail::any_needs(g, {a.id, b.id});
  int id = g.computed(std::move(y), needs, [ai = a.id, bi = b.id](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.nodes[size_t(self)].grad;
    if (g.needs(ai)) detail::axpy(g.grad(ai), gy, T(1));
    if (g.needs(bi)) detail::axpy(g.grad(bi), gy, T(1));
  });
  return {&g, id};
}

// a + alpha * b
template <class T>
Var<T> axpy(Var<T> a, Var<T> b, T alpha) {
  Graph<T>& g = *a.g;
  if (!a.value().same_shape(b.value())) throw StateError("axpy: shape mismatch");
  Tensor<T> y = a.value();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += alpha * b.value()[i];
  bool needs = detail::any_needs(g, {a.id, b.id});
  int id = g.computed(std::move(y), needs, [ai = a.id, bi = b.id, alpha](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.nodes[size_t(self)].grad;
    if (g.needs(ai)) detail::axpy(g.grad(ai), gy, T(1));
    if (g.needs(bi)) detail::axpy(g.grad(bi), gy, alpha);
  });
  return {&g, id};
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return axpy(a, b, T(-1));
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  if (!a.value().same_shape(b.value())) throw StateError("mul: shape mismatch");
  Tensor<T> y = a.value();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  bool needs = detail::any_needs(g, {a.id, b.id});
  int id = g.computed(std::move(y), needs, [ai = a.id, bi = b.id](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.nodes[size_t(self)].grad;
    if (g.needs(ai)) {
      Tensor<T>& da = g.grad(ai);
      const Tensor<T>& bv = g.val(bi);
      for (int64_t i = 0; i < da.numel(); ++i) da[i] += gy[i] * bv[i];
    }
    if (g.needs(bi)) {
      Tensor<T>& db = g.grad(bi);
      const Tensor<T>& av = g.val(ai);
      for (int64_t i = 0; i < db.numel(); ++i) db[i] += gy[i] * av[i];
    }
  });
  return {&g, id};
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  Graph<T>& g = *a.g;
  Tensor<T> y = a.value();
  for (auto& v : y.data) v *= c;
  int id = g.computed(std::move(y), g.needs(a.id), [ai = a.id, c](Graph<T>& g, int self) {
    detail::axpy(g.grad(ai), g.nodes[size_t(self)].grad, c);
  });
  return {&g, id};
}

template <class T>
Var<T> add_const(Var<T> a, T c) {
  Graph<T>& g = *a.g;
  Tensor<T> y = a.value();
  for (auto& v : y.data) v += c;
  int id = g.computed(std::move(y), g.needs(a.id), [ai = a.id](Graph<T>& g, int self) {
    detail::axpy(g.grad(ai), g.nodes[size_t(self)].grad, T(1));
  });
  return {&g, id};
}

template <class T>
Var<T> lrelu(Var<T> a, T slope) {
  Graph<T>& g = *a.g;
  Tensor<T> y = a.value();
  for (auto& v : y.data) v = v > T(0) ? v : slope * v;
  int id = g.computed(std::move(y), g.needs(a.id), [ai = a.id, slope](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.nodes[size_t(self)].grad;
    const Tensor<T>& x = g.val(ai);
    Tensor<T>& dx = g.grad(ai);
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gy[i] * (x[i] > T(0) ? T(1) : slope);
  });
  return {&g, id};
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Graph<T>& g = *a.g;
  Tensor<T> y = a.value();
  for (auto& v : y.data) v = T(1) / (T(1) + std::exp(-v));
  int id = g.computed(std::move(y), g.needs(a.id), [ai = a.id](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.nodes[size_t(self)].grad;
    const Tensor<T>& y = g.val(self);
    Tensor<T>& dx = g.grad(ai);
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gy[i] * y[i] * (T(1) - y[i]);
  });
  return {&g, id};
}

// log(1 + exp(x)), numerically stable in both tails.
template <class T>
Var<T> softplus(Var<T> a) {
  Graph<T>& g = *a.g;
  Tensor<T> y = a.value();
  for (auto& v : y.data) v = v > T(20) ? v : (v < T(-20) ? std::exp(v) : std::log1p(std::exp(v)));
  int id = g.computed(std::move(y), g.needs(a.id), [ai = a.id](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.nodes[size_t(self)].grad;
    const Tensor<T>& x = g.val(ai);
    Tensor<T>& dx = g.grad(ai);
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gy[i] / (T(1) + std::exp(-x[i]));
  });
  return {&g, id};
}

template <class T>
Var<T> reshape(Var<T> a, std::vector<int> shape) {
  Graph<T>& g = *a.g;
  if (Tensor<T>::count(shape) != a.value().numel()) throw StateError("reshape: element count mismatch");
  Tensor<T> y(shape, a.value().data);
  int id = g.computed(std::move(y), g.needs(a.id), [ai = a.id](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.nodes[size_t(self)].grad;
    Tensor<T>& dx = g.grad(ai);
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gy[i];
  });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
Var<T> sum_all(Var<T> a) {
  Graph<T>& g = *a.g;
  T s = 0;
  for (const auto& v : a.value().data) s += v;
  int id = g.computed(Tensor<T>::scalar(s), g.needs(a.id), [ai = a.id](Graph<T>& g, int self) {
    T gy = g.nodes[size_t(self)].grad[0];
    Tensor<T>& dx = g.grad(ai);
    for (auto& v : dx.data) v += gy;
  });
  return {&g, id};
}

template <class T>
Var<T> mean_all(Var<T> a) {
  Graph<T>& g = *a.g;
  T s = 0;
  for (const auto& v : a.value().data) s += v;
  T inv = T(1) / T(a.value().numel());
  int id = g.computed(Tensor<T>::scalar(s * inv), g.needs(a.id), [ai = a.id, inv](Graph<T>& g, int self) {
    T gy = g.nodes[size_t(self)].grad[0] * inv;
    Tensor<T>& dx = g.grad(ai);
    for (auto& v : dx.data) v += gy;
  });
  return {&g, id};
}

// [B,D] -> [D], mean over rows.
template <class T>
Var<T> mean_rows(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& x = a.value();
  if (x.ndim() != 2) throw StateError("mean_rows: rank-2 input expected");
  int B = x.dim(0), D = x.dim(1);
  Tensor<T> y({D});
  for (int b = 0; b < B; ++b)
    for (int d = 0; d < D; ++d) y[d] += x.at(b, d);
  T inv = T(1) / T(B);
  for (auto& v : y.data) v *= inv;
  int id = g.computed(std::move(y), g.needs(a.id), [ai = a.id, B, D, inv](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.nodes[size_t(self)].grad;
    Tensor<T>& dx = g.grad(ai);
    for (int b = 0; b < B; ++b)
      for (int d = 0; d < D; ++d) dx.at(b, d) += gy[d] * inv;
  });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// vector geometry

// [D] -> [D], x / sqrt(|x|^2 + eps). eps keeps the op differentiable at 0.
template <class T>
Var<T> vec_normalize(Var<T> a, T eps = T(1e-12)) {
  Graph<T>& g = *a.g;
  const Tensor<T>& x = a.value();
  T ss = 0;
  for (const auto& v : x.data) ss += v * v;
  T r = std::sqrt(ss + eps);
  Tensor<T> y = x;
  for (auto& v : y.data) v /= r;
  int id = g.computed(std::move(y), g.needs(a.id), [ai = a.id, r](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.nodes[size_t(self)].grad;
    const Tensor<T>& y = g.val(self);
    Tensor<T>& dx = g.grad(ai);
    T dot = 0;
    for (int64_t i = 0; i < y.numel(); ++i) dot += gy[i] * y[i];
    for (int64_t i = 0; i < y.numel(); ++i) dx[i] += (gy[i] - y[i] * dot) / r;
  });
  return {&g, id};
}

template <class T>
Var<T> vec_dot(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  if (!a.value().same_shape(b.value())) throw StateError("vec_dot: shape mismatch");
  T s = 0;
  for (int64_t i = 0; i < a.value().numel(); ++i) s += a.value()[i] * b.value()[i];
  bool needs = detail::any_needs(g, {a.id, b.id});
  int id = g.computed(Tensor<T>::scalar(s), needs, [ai = a.id, bi = b.id](Graph<T>& g, int self) {
    T gy = g.nodes[size_t(self)].grad[0];
    if (g.needs(ai)) detail::axpy(g.grad(ai), g.val(bi), gy);
    if (g.needs(bi)) detail::axpy(g.grad(bi), g.val(ai), gy);
  });
  return {&g, id};
}

// [B,D] -> [B,D], each row scaled to unit length (up to eps).
template <class T>
Var<T> rows_normalize(Var<T> a, T eps = T(1e-12)) {
  Graph<T>& g = *a.g;
  const Tensor<T>& x = a.value();
  if (x.ndim() != 2) throw StateError("rows_normalize: rank-2 input expected");
  int B = x.dim(0), D = x.dim(1);
  auto radii = std::make_shared<std::vector<T>>(size_t(B));
  Tensor<T> y = x;
  for (int b = 0; b < B; ++b) {
    T ss = 0;
    for (int d = 0; d < D; ++d) ss += x.at(b, d) * x.at(b, d);
    T r = std::sqrt(ss + eps);
    (*radii)[size_t(b)] = r;
    for (int d = 0; d < D; ++d) y.at(b, d) /= r;
  }
  int id = g.computed(std::move(y), g.needs(a.id),
                      [ai = a.id, B, D, radii](Graph<T>& g, int self) {
                        const Tensor<T>& gy = g.nodes[size_t(self)].grad;
                        const Tensor<T>& y = g.val(self);
                        Tensor<T>& dx = g.grad(ai);
                        for (int b = 0; b < B; ++b) {
                          T dot = 0;
                          for (int d = 0; d < D; ++d) dot += gy.at(b, d) * y.at(b, d);
                          T r = (*radii)[size_t(b)];
                          for (int d = 0; d < D; ++d) dx.at(b, d) += (gy.at(b, d) - y.at(b, d) * dot) / r;
                        }
                      },
                      radii);
  return {&g, id};
}

// [B,D],[B,D] -> [B], per-row dot product.
template <class T>
Var<T> rows_dot(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  if (!a.value().same_shape(b.value())) throw StateError("rows_dot: shape mismatch");
  int B = a.value().dim(0), D = a.value().dim(1);
  Tensor<T> y({B});
  for (int r = 0; r < B; ++r) {
    T s = 0;
    for (int d = 0; d < D; ++d) s += a.value().at(r, d) * b.value().at(r, d);
    y[r] = s;
  }
  bool needs = detail::any_needs(g, {a.id, b.id});
  int id = g.computed(std::move(y), needs, [ai = a.id, bi = b.id, B, D](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.nodes[size_t(self)].grad;
    if (g.needs(ai)) {
      Tensor<T>& da = g.grad(ai);
      const Tensor<T>& bv = g.val(bi);
      for (int r = 0; r < B; ++r)
        for (int d = 0; d < D; ++d) da.at(r, d) += gy[r] * bv.at(r, d);
    }
    if (g.needs(bi)) {
      Tensor<T>& db = g.grad(bi);
      const Tensor<T>& av = g.val(ai);
      for (int r = 0; r < B; ++r)
        for (int d = 0; d < D; ++d) db.at(r, d) += gy[r] * av.at(r, d);
    }
  });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// linear algebra

// x [B,I] * W^T [I,O] + b [O] -> [B,O]
template <class T>
Var<T> linear(Var<T> x, Var<T> W, Var<T> b) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = W.value();
  const Tensor<T>& bv = b.value();
  int B = xv.dim(0), I = xv.dim(1), O = wv.dim(0);
  if (wv.dim(1) != I || bv.dim(0) != O) throw StateError("linear: shape mismatch");
  Tensor<T> y({B, O});
  as_mat(y, B, O).noalias() = as_mat(xv, B, I) * as_mat(wv, O, I).transpose();
  for (int r = 0; r < B; ++r)
    for (int o = 0; o < O; ++o) y.at(r, o) += bv[o];
  bool needs = detail::any_needs(g, {x.id, W.id, b.id});
  int id = g.computed(std::move(y), needs,
                      [xi = x.id, wi = W.id, bi = b.id, B, I, O](Graph<T>& g, int self) {
                        const Tensor<T>& gy = g.nodes[size_t(self)].grad;
                        auto gym = as_mat(gy, B, O);
                        if (g.needs(xi))
                          as_mat(g.grad(xi), B, I).noalias() += gym * as_mat(g.val(wi), O, I);
                        if (g.needs(wi))
                          as_mat(g.grad(wi), O, I).noalias() += gym.transpose() * as_mat(g.val(xi), B, I);
                        if (g.needs(bi)) {
                          Tensor<T>& db = g.grad(bi);
                          for (int r = 0; r < B; ++r)
                            for (int o = 0; o < O; ++o) db[o] += gy.at(r, o);
                        }
                      });
  return {&g, id};
}

// a [M,K] * b^T [K,N] -> [M,N]; used for contrastive logits.
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  int M = a.value().dim(0), K = a.value().dim(1), N = b.value().dim(0);
  if (b.value().dim(1) != K) throw StateError("matmul_nt: inner dimension mismatch");
  Tensor<T> y({M, N});
  as_mat(y, M, N).noalias() = as_mat(a.value(), M, K) * as_mat(b.value(), N, K).transpose();
  bool needs = detail::any_needs(g, {a.id, b.id});
  int id = g.computed(std::move(y), needs, [ai = a.id, bi = b.id, M, K, N](Graph<T>& g, int self) {
    auto gym = as_mat(g.nodes[size_t(self)].grad, M, N);
    if (g.needs(ai)) as_mat(g.grad(ai), M, K).noalias() += gym * as_mat(g.val(bi), N, K);
    if (g.needs(bi)) as_mat(g.grad(bi), N, K).noalias() += gym.transpose() * as_mat(g.val(ai), M, K);
  });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// image ops (NCHW)

namespace detail {
// Unfolds x [B,C,H,W] into cols [B*OH*OW, C*KH*KW] for a KxK kernel.
template <class T>
void im2col(const Tensor<T>& x, int K, int stride, int pad, int OH, int OW, Tensor<T>& cols) {
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t row = 0;
  for (int b = 0; b < B; ++b)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow, ++row) {
        T* dst = cols.ptr() + row * (int64_t(C) * K * K);
        for (int c = 0; c < C; ++c) {
          const T* src = &x.at(b, c, 0, 0);
          for (int kh = 0; kh < K; ++kh) {
            int ih = oh * stride + kh - pad;
            for (int kw = 0; kw < K; ++kw) {
              int iw = ow * stride + kw - pad;
              *dst++ = (ih >= 0 && ih < H && iw >= 0 && iw < W) ? src[int64_t(ih) * W + iw] : T(0);
            }
          }
        }
      }
}

// Scatters cols-layout gradients back into dx; transpose of im2col.
template <class T>
void col2im(const Tensor<T>& cols, int K, int stride, int pad, int OH, int OW, Tensor<T>& dx) {
  int B = dx.dim(0), C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  int64_t row = 0;
  for (int b = 0; b < B; ++b)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow, ++row) {
        const T* src = cols.ptr() + row * (int64_t(C) * K * K);
        for (int c = 0; c < C; ++c) {
          T* dst = &dx.at(b, c, 0, 0);
          for (int kh = 0; kh < K; ++kh) {
            int ih = oh * stride + kh - pad;
            for (int kw = 0; kw < K; ++kw, ++src) {
              int iw = ow * stride + kw - pad;
              if (ih >= 0 && ih < H && iw >= 0 && iw < W) dst[int64_t(ih) * W + iw] += *src;
            }
          }
        }
      }
}
}  // namespace detail

// Conv2d, square kernel. x [B,C,H,W], w [O,C,K,K], b [O] -> [B,O,OH,OW].
// Lowered to one GEMM over im2col patches; the patch matrix is cached for
// the backward pass.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int O = wv.dim(0), K = wv.dim(2);
  if (wv.dim(1) != C || wv.dim(3) != K) throw StateError("conv2d: weight shape mismatch");
  int OH = (H + 2 * pad - K) / stride + 1;
  int OW = (W + 2 * pad - K) / stride + 1;
  int64_t rows = int64_t(B) * OH * OW;
  int64_t ckk = int64_t(C) * K * K;

  bool needs = detail::any_needs(g, {x.id, w.id, b.id});
  bool keep_cols = needs && g.recording;

  // Special case 1x1 stride-1 convs: pure channel mix, no patch matrix.
  if (K == 1 && stride == 1 && pad == 0) {
    Tensor<T> y({B, O, H, W});
    for (int bb = 0; bb < B; ++bb) {
      Eigen::Map<const MatRM<T>> xm(&xv.at(bb, 0, 0, 0), C, int64_t(H) * W);
      Eigen::Map<MatRM<T>> ym(&y.at(bb, 0, 0, 0), O, int64_t(H) * W);
      ym.noalias() = as_mat(wv, O, C) * xm;
    }
    for (int bb = 0; bb < B; ++bb)
      for (int o = 0; o < O; ++o) {
        T bias = b.value()[o];
        T* p = &y.at(bb, o, 0, 0);
        for (int64_t i = 0; i < int64_t(H) * W; ++i) p[i] += bias;
      }
    int id = g.computed(std::move(y), needs,
                        [xi = x.id, wi = w.id, bi = b.id, B, C, O, H, W](Graph<T>& g, int self) {
                          const Tensor<T>& gy = g.nodes[size_t(self)].grad;
                          int64_t hw = int64_t(H) * W;
                          for (int bb = 0; bb < B; ++bb) {
                            Eigen::Map<const MatRM<T>> gym(&gy.at(bb, 0, 0, 0), O, hw);
                            if (g.needs(xi)) {
                              Eigen::Map<MatRM<T>> dxm(&g.grad(xi).at(bb, 0, 0, 0), C, hw);
                              dxm.noalias() += as_mat(g.val(wi), O, C).transpose() * gym;
                            }
                            if (g.needs(wi)) {
                              Eigen::Map<const MatRM<T>> xm(&g.val(xi).at(bb, 0, 0, 0), C, hw);
                              as_mat(g.grad(wi), O, C).noalias() += gym * xm.transpose();
                            }
                          }
                          if (g.needs(bi)) {
                            Tensor<T>& db = g.grad(bi);
                            for (int bb = 0; bb < B; ++bb)
                              for (int o = 0; o < O; ++o) {
                                const T* p = &gy.at(bb, o, 0, 0);
                                T s = 0;
                                for (int64_t i = 0; i < hw; ++i) s += p[i];
                                db[o] += s;
                              }
                          }
                        });
    return {&g, id};
  }

  auto cols = std::make_shared<Tensor<T>>(std::vector<int>{int(rows), int(ckk)});
  detail::im2col(xv, K, stride, pad, OH, OW, *cols);

  // y2 [O, rows] = w [O,ckk] * cols^T, then reorder into [B,O,OH,OW].
  Tensor<T> y({B, O, OH, OW});
  {
    MatRM<T> y2 = as_mat(wv, O, ckk) * as_mat(*cols, rows, ckk).transpose();
    int64_t ohw = int64_t(OH) * OW;
    for (int bb = 0; bb < B; ++bb)
      for (int o = 0; o < O; ++o) {
        const T* src = y2.data() + int64_t(o) * rows + int64_t(bb) * ohw;
        T* dst = &y.at(bb, o, 0, 0);
        T bias = b.value()[o];
        for (int64_t i = 0; i < ohw; ++i) dst[i] = src[i] + bias;
      }
  }

  std::shared_ptr<void> stash = keep_cols ? cols : nullptr;
  int id = g.computed(
      std::move(y), needs,
      [xi = x.id, wi = w.id, bi = b.id, cols, B, O, K, stride, pad, OH, OW, rows,
       ckk](Graph<T>& g, int self) {
        const Tensor<T>& gy = g.nodes[size_t(self)].grad;
        int64_t ohw = int64_t(OH) * OW;
        // reorder gy into [rows, O]
        Tensor<T> gy2({int(rows), O});
        for (int bb = 0; bb < B; ++bb)
          for (int o = 0; o < O; ++o) {
            const T* src = &gy.at(bb, o, 0, 0);
            T* dst = gy2.ptr() + int64_t(bb) * ohw * O + o;
            for (int64_t i = 0; i < ohw; ++i) dst[i * O] = src[i];
          }
        if (g.needs(wi))
          as_mat(g.grad(wi), O, ckk).noalias() +=
              as_mat(gy2, rows, O).transpose() * as_mat(*cols, rows, ckk);
        if (g.needs(bi)) {
          Tensor<T>& db = g.grad(bi);
          for (int64_t r = 0; r < rows; ++r)
            for (int o = 0; o < O; ++o) db[o] += gy2.at(int(r), o);
        }
        if (g.needs(xi)) {
          Tensor<T> dcols({int(rows), int(ckk)});
          as_mat(dcols, rows, ckk).noalias() =
              as_mat(gy2, rows, O) * as_mat(g.val(wi), O, ckk);
          detail::col2im(dcols, K, stride, pad, OH, OW, g.grad(xi));
        }
      },
      stash);
  return {&g, id};
}

// Nearest-neighbour 2x upsample: [B,C,H,W] -> [B,C,2H,2W].
template <class T>
Var<T> upsample2(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = x.value();
  int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor<T> y({B, C, 2 * H, 2 * W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < 2 * H; ++h)
        for (int w = 0; w < 2 * W; ++w) y.at(b, c, h, w) = xv.at(b, c, h / 2, w / 2);
  int id = g.computed(std::move(y), g.needs(x.id), [xi = x.id, B, C, H, W](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.nodes[size_t(self)].grad;
    Tensor<T>& dx = g.grad(xi);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < 2 * H; ++h)
          for (int w = 0; w < 2 * W; ++w) dx.at(b, c, h / 2, w / 2) += gy.at(b, c, h, w);
  });
  return {&g, id};
}

// Per-(sample, channel) normalization over spatial positions:
// y = (x - mean) / sqrt(var + eps). Affine modulation is a separate op.
template <class T>
Var<T> instance_norm(Var<T> x, T eps = T(1e-5)) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = x.value();
  int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int64_t hw = int64_t(H) * W;
  auto inv_sigma = std::make_shared<std::vector<T>>(size_t(B) * C);
  Tensor<T> y(xv.shape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* src = &xv.at(b, c, 0, 0);
      T* dst = &y.at(b, c, 0, 0);
      T mean = 0;
      for (int64_t i = 0; i < hw; ++i) mean += src[i];
      mean /= T(hw);
      T var = 0;
      for (int64_t i = 0; i < hw; ++i) {
        T d = src[i] - mean;
        var += d * d;
      }
      var /= T(hw);
      T is = T(1) / std::sqrt(var + eps);
      (*inv_sigma)[size_t(b) * C + c] = is;
      for (int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mean) * is;
    }
  int id = g.computed(std::move(y), g.needs(x.id),
                      [xi = x.id, B, C, hw, inv_sigma](Graph<T>& g, int self) {
                        const Tensor<T>& gy = g.nodes[size_t(self)].grad;
                        const Tensor<T>& y = g.val(self);
                        Tensor<T>& dx = g.grad(xi);
                        for (int b = 0; b < B; ++b)
                          for (int c = 0; c < C; ++c) {
                            int64_t off = (int64_t(b) * C + c) * hw;
                            const T* gp = gy.ptr() + off;
                            const T* yp = y.ptr() + off;
                            T* dp = dx.ptr() + off;
                            T mg = 0, mgy = 0;
                            for (int64_t i = 0; i < hw; ++i) {
                              mg += gp[i];
                              mgy += gp[i] * yp[i];
                            }
                            mg /= T(hw);
                            mgy /= T(hw);
                            T is = (*inv_sigma)[size_t(b) * C + c];
                            for (int64_t i = 0; i < hw; ++i)
                              dp[i] += (gp[i] - mg - yp[i] * mgy) * is;
                          }
                      },
                      inv_sigma);
  return {&g, id};
}

// Per-(sample, channel) affine: y[b,c,h,w] = gamma[b,c] * x[b,c,h,w] + beta[b,c].
template <class T>
Var<T> channel_affine(Var<T> x, Var<T> gamma, Var<T> beta) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = x.value();
  int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (gamma.value().dim(0) != B || gamma.value().dim(1) != C) throw StateError("channel_affine: gamma shape");
  int64_t hw = int64_t(H) * W;
  Tensor<T> y(xv.shape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      T gm = gamma.value().at(b, c), bt = beta.value().at(b, c);
      const T* src = &xv.at(b, c, 0, 0);
      T* dst = &y.at(b, c, 0, 0);
      for (int64_t i = 0; i < hw; ++i) dst[i] = gm * src[i] + bt;
    }
  bool needs = detail::any_needs(g, {x.id, gamma.id, beta.id});
  int id = g.computed(std::move(y), needs,
                      [xi = x.id, gi = gamma.id, bi = beta.id, B, C, hw](Graph<T>& g, int self) {
                        const Tensor<T>& gy = g.nodes[size_t(self)].grad;
                        for (int b = 0; b < B; ++b)
                          for (int c = 0; c < C; ++c) {
                            int64_t off = (int64_t(b) * C + c) * hw;
                            const T* gp = gy.ptr() + off;
                            if (g.needs(xi)) {
                              T gm = g.val(gi).at(b, c);
                              T* dp = g.grad(xi).ptr() + off;
                              for (int64_t i = 0; i < hw; ++i) dp[i] += gp[i] * gm;
                            }
                            if (g.needs(gi)) {
                              const T* xp = g.val(xi).ptr() + off;
                              T s = 0;
                              for (int64_t i = 0; i < hw; ++i) s += gp[i] * xp[i];
                              g.grad(gi).at(b, c) += s;
                            }
                            if (g.needs(bi)) {
                              T s = 0;
                              for (int64_t i = 0; i < hw; ++i) s += gp[i];
                              g.grad(bi).at(b, c) += s;
                            }
                          }
                      });
  return {&g, id};
}

// Unit-normalizes the channel vector at every spatial position:
// y[b,:,h,w] = x[b,:,h,w] / sqrt(|x[b,:,h,w]|^2 + eps).
template <class T>
Var<T> spatial_unit(Var<T> x, T eps = T(1e-10)) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = x.value();
  int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int64_t hw = int64_t(H) * W;
  auto radii = std::make_shared<std::vector<T>>(size_t(B) * hw);
  Tensor<T> y(xv.shape);
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      T ss = 0;
      for (int c = 0; c < C; ++c) {
        T v = xv.ptr()[(int64_t(b) * C + c) * hw + i];
        ss += v * v;
      }
      T r = std::sqrt(ss + eps);
      (*radii)[size_t(b) * hw + i] = r;
      for (int c = 0; c < C; ++c) {
        int64_t off = (int64_t(b) * C + c) * hw + i;
        y.ptr()[off] = xv.ptr()[off] / r;
      }
    }
  int id = g.computed(std::move(y), g.needs(x.id),
                      [xi = x.id, B, C, hw, radii](Graph<T>& g, int self) {
                        const Tensor<T>& gy = g.nodes[size_t(self)].grad;
                        const Tensor<T>& y = g.val(self);
                        Tensor<T>& dx = g.grad(xi);
                        for (int b = 0; b < B; ++b)
                          for (int64_t i = 0; i < hw; ++i) {
                            T dot = 0;
                            for (int c = 0; c < C; ++c) {
                              int64_t off = (int64_t(b) * C + c) * hw + i;
                              dot += gy.ptr()[off] * y.ptr()[off];
                            }
                            T r = (*radii)[size_t(b) * hw + i];
                            for (int c = 0; c < C; ++c) {
                              int64_t off = (int64_t(b) * C + c) * hw + i;
                              dx.ptr()[off] += (gy.ptr()[off] - y.ptr()[off] * dot) / r;
                            }
                          }
                      },
                      radii);
  return {&g, id};
}

// ---------------------------------------------------------------------------
// classification loss

// Mean cross-entropy over rows of logits [B,C] against integer labels.
template <class T>
Var<T> softmax_xent(Var<T> logits, const std::vector<int>& labels) {
  Graph<T>& g = *logits.g;
  const Tensor<T>& lv = logits.value();
  int B = lv.dim(0), C = lv.dim(1);
  if (int(labels.size()) != B) throw StateError("softmax_xent: label count mismatch");
  auto probs = std::make_shared<Tensor<T>>(std::vector<int>{B, C});
  T loss = 0;
  for (int b = 0; b < B; ++b) {
    T mx = lv.at(b, 0);
    for (int c = 1; c < C; ++c) mx = std::max(mx, lv.at(b, c));
    T z = 0;
    for (int c = 0; c < C; ++c) {
      T e = std::exp(lv.at(b, c) - mx);
      probs->at(b, c) = e;
      z += e;
    }
    for (int c = 0; c < C; ++c) probs->at(b, c) /= z;
    loss -= std::log(std::max(probs->at(b, labels[size_t(b)]), T(1e-30)));
  }
  loss /= T(B);
  int id = g.computed(Tensor<T>::scalar(loss), g.needs(logits.id),
                      [li = logits.id, labels, probs, B, C](Graph<T>& g, int self) {
                        T gy = g.nodes[size_t(self)].grad[0] / T(B);
                        Tensor<T>& dl = g.grad(li);
                        for (int b = 0; b < B; ++b)
                          for (int c = 0; c < C; ++c) {
                            T p = probs->at(b, c);
                            dl.at(b, c) += gy * (p - (labels[size_t(b)] == c ? T(1) : T(0)));
                          }
                      },
                      probs);
  return {&g, id};
}

// Forward-only softmax over rows.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  int B = logits.dim(0), C = logits.dim(1);
  Tensor<T> p({B, C});
  for (int b = 0; b < B; ++b) {
    T mx = logits.at(b, 0);
    for (int c = 1; c < C; ++c) mx = std::max(mx, logits.at(b, c));
    T z = 0;
    for (int c = 0; c < C; ++c) {
      p.at(b, c) = std::exp(logits.at(b, c) - mx);
      z += p.at(b, c);
    }
    for (int c = 0; c < C; ++c) p.at(b, c) /= z;
  }
  return p;
}

}  // namespace gu
