#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "ganunlearn/core/common.hpp"
#include "ganunlearn/core/rng.hpp"

namespace gu {

// Dense row-major n-d array. Shapes are small (<=4 dims in practice) and
// all layout math is explicit at the op level, so this stays a dumb
// container: contiguous storage plus a shape vector.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(size_t(count(shape)), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {}

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor gaussian(std::vector<int> s, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = T(rng.gauss()) * stddev;
    return t;
  }

  int64_t numel() const { return int64_t(data.size()); }
  int ndim() const { return int(shape.size()); }
  int dim(int i) const { return shape[size_t(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[size_t(i)]; }
  const T& operator[](int64_t i) const { return data[size_t(i)]; }

  // Row-major offset helpers for the common ranks.
  T& at(int i, int j) { return data[size_t(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return data[size_t(i) * shape[1] + j]; }
  T& at(int i, int j, int k) { return data[(size_t(i) * shape[1] + j) * shape[2] + k]; }
  const T& at(int i, int j, int k) const { return data[(size_t(i) * shape[1] + j) * shape[2] + k]; }
  T& at(int b, int c, int h, int w) {
    return data[((size_t(b) * shape[1] + c) * shape[2] + h) * size_t(shape[3]) + w];
  }
  const T& at(int b, int c, int h, int w) const {
    return data[((size_t(b) * shape[1] + c) * shape[2] + h) * size_t(shape[3]) + w];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Views tensor storage as a rows x cols row-major Eigen matrix.
template <class T>
Eigen::Map<MatRM<T>> as_mat(Tensor<T>& t, int64_t rows, int64_t cols) {
  return Eigen::Map<MatRM<T>>(t.ptr(), rows, cols);
}

template <class T>
Eigen::Map<const MatRM<T>> as_mat(const Tensor<T>& t, int64_t rows, int64_t cols) {
  return Eigen::Map<const MatRM<T>>(t.ptr(), rows, cols);
}

}  // namespace gu
