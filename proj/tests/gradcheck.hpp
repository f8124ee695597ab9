#pragma once

#include <functional>
#include <vector>

#include "ganunlearn/core/graph.hpp"

// Shared finite-difference gradient checker. Builds the scalar-valued graph
// once for analytic gradients, then re-evaluates it with each input element
// perturbed by +-eps. Used with T=double so the FD truncation error stays
// far below the comparison tolerance.
namespace gu::testing {

template <class T>
struct GradCheckResult {
  T max_rel_err = 0;
  int64_t checked = 0;
};

// build: (Graph&, vector<Var>) -> scalar Var. inputs are perturbed in place.
template <class T, class F>
GradCheckResult<T> gradcheck(F build, std::vector<Tensor<T>*> inputs, T eps = T(1e-4),
                             T denom_floor = T(1e-6)) {
  Graph<T> g;
  std::vector<Tensor<T>> grads(inputs.size());
  std::vector<Var<T>> vars;
  for (size_t i = 0; i < inputs.size(); ++i) {
    grads[i] = Tensor<T>::zeros(inputs[i]->shape);
    vars.push_back({&g, g.leaf(inputs[i], &grads[i], true)});
  }
  Var<T> root = build(g, vars);
  if (root.value().numel() != 1) throw StateError("gradcheck: non-scalar objective");
  g.backward(root.id);

  auto eval = [&]() {
    Graph<T> h;
    h.recording = false;
    std::vector<Var<T>> vs;
    for (auto* t : inputs) vs.push_back({&h, h.leaf(t, nullptr, false)});
    return build(h, vs).value()[0];
  };

  GradCheckResult<T> res;
  for (size_t i = 0; i < inputs.size(); ++i) {
    Tensor<T>& x = *inputs[i];
    for (int64_t k = 0; k < x.numel(); ++k) {
      T saved = x[k];
      x[k] = saved + eps;
      T fp = eval();
      x[k] = saved - eps;
      T fm = eval();
      x[k] = saved;
      T fd = (fp - fm) / (2 * eps);
      T a = grads[i][k];
      T denom = std::max(denom_floor, std::max(std::abs(a), std::abs(fd)));
      res.max_rel_err = std::max(res.max_rel_err, std::abs(a - fd) / denom);
      res.checked += 1;
    }
  }
  return res;
}

}  // namespace gu::testing
