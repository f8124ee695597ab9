#pragma once

#include <string>
#include <vector>

#include "ganunlearn/core/graph.hpp"

namespace gu {

// A named trainable tensor plus its gradient accumulator and Adam state.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m, v;  // Adam moments, allocated on first step
  int64_t steps = 0;

  void init(std::string n, Tensor<T> val) {
    name = std::move(n);
    value = std::move(val);
    grad = Tensor<T>::zeros(value.shape);
  }

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }

  // Binds this parameter into a graph; trainable=false keeps the subgraph
  // gradient-free (frozen network or unselected layer).
  Var<T> bind(Graph<T>& g, bool trainable) {
    return {&g, g.leaf(&value, trainable ? &grad : nullptr, trainable)};
  }
};

template <class T>
struct AdamConfig {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// Bias-corrected Adam update on every parameter with a nonzero grad flag;
// callers zero grads themselves after stepping.
template <class T>
void adam_step(std::vector<Param<T>*>& params, const AdamConfig<T>& cfg) {
  for (Param<T>* p : params) {
    if (p->m.numel() == 0) {
      p->m = Tensor<T>::zeros(p->value.shape);
      p->v = Tensor<T>::zeros(p->value.shape);
    }
    p->steps += 1;
    T b1t = T(1) - std::pow(cfg.beta1, T(p->steps));
    T b2t = T(1) - std::pow(cfg.beta2, T(p->steps));
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      T g = p->grad[i];
      p->m[i] = cfg.beta1 * p->m[i] + (T(1) - cfg.beta1) * g;
      p->v[i] = cfg.beta2 * p->v[i] + (T(1) - cfg.beta2) * g * g;
      T mhat = p->m[i] / b1t;
      T vhat = p->v[i] / b2t;
      p->value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    p->zero_grad();
  }
}

// Fully connected layer; weights He-initialized for leaky-relu trunks.
template <class T>
struct Linear {
  Param<T> W, b;
  int in = 0, out = 0;

  void init(const std::string& name, int in_dim, int out_dim, Rng& rng, T w_scale = T(-1)) {
    in = in_dim;
    out = out_dim;
    T s = w_scale > T(0) ? w_scale : std::sqrt(T(2) / T(in_dim));
    W.init(name + ".w", Tensor<T>::gaussian({out_dim, in_dim}, rng, s));
    b.init(name + ".b", Tensor<T>::zeros({out_dim}));
  }

  Var<T> fwd(Graph<T>& g, Var<T> x, bool trainable) {
    return linear(x, W.bind(g, trainable), b.bind(g, trainable));
  }

  void collect(std::vector<Param<T>*>& out_params) {
    out_params.push_back(&W);
    out_params.push_back(&b);
  }
};

// Square-kernel convolution layer.
template <class T>
struct Conv {
  Param<T> W, b;
  int stride = 1, pad = 1;

  void init(const std::string& name, int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng,
            T w_scale = T(-1)) {
    stride = stride_;
    pad = pad_;
    T s = w_scale > T(0) ? w_scale : std::sqrt(T(2) / T(in_ch * k * k));
    W.init(name + ".w", Tensor<T>::gaussian({out_ch, in_ch, k, k}, rng, s));
    b.init(name + ".b", Tensor<T>::zeros({out_ch}));
  }

  Var<T> fwd(Graph<T>& g, Var<T> x, bool trainable) {
    return conv2d(x, W.bind(g, trainable), b.bind(g, trainable), stride, pad);
  }

  void collect(std::vector<Param<T>*>& out_params) {
    out_params.push_back(&W);
    out_params.push_back(&b);
  }
};

// Copies values (not optimizer state) between identically shaped param lists.
template <class T>
void copy_params(const std::vector<Param<T>*>& src, std::vector<Param<T>*>& dst) {
  if (src.size() != dst.size()) throw StateError("copy_params: list size mismatch");
  for (size_t i = 0; i < src.size(); ++i) {
    if (!src[i]->value.same_shape(dst[i]->value)) throw StateError("copy_params: shape mismatch");
    dst[i]->value.data = src[i]->value.data;
  }
}

// Order-sensitive content hash of parameter values; used by the invariance
// checks that pin frozen networks down to the bit level.
template <class T>
uint64_t params_hash(const std::vector<Param<T>*>& params) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const Param<T>* p : params) {
    h = fnv1a64(p->name.data(), p->name.size(), h);
    h = fnv1a64(p->value.data.data(), p->value.data.size() * sizeof(T), h);
  }
  return h;
}

}  // namespace gu
