// Copyright (c) the mtac project authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MTAC_TENSOR_HPP_
#define MTAC_TENSOR_HPP_

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mtac/common.hpp"

namespace mtac {

// Dense row-major tensor. Feature maps use (h, w, c) with c innermost,
// batched matrices use (b, m, n).
template <class T>
struct Tensor {
  std::vector<int> dims;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)), v(count(dims)) {}
  Tensor(std::vector<int> d, T fill) : dims(std::move(d)), v(count(dims), fill) {}

  static std::int64_t count(const std::vector<int>& d) {
    std::int64_t n = 1;
    for (int x : d) n *= x;
    return n;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  int rank() const { return static_cast<int>(dims.size()); }
  int dim(int i) const { return dims[static_cast<std::size_t>(i)]; }
  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  // 3-d accessors for (h, w, c) maps.
  T& at(int i, int j, int k) {
    return v[(static_cast<std::int64_t>(i) * dims[1] + j) * dims[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return v[(static_cast<std::int64_t>(i) * dims[1] + j) * dims[2] + k];
  }
  T& at(int i, int j) { return v[static_cast<std::int64_t>(i) * dims[1] + j]; }
  const T& at(int i, int j) const {
    return v[static_cast<std::int64_t>(i) * dims[1] + j];
  }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(dims[i]);
    }
    return s + ")";
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.dims = dims;
    out.v.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }

  static Tensor zeros(std::vector<int> d) { return Tensor(std::move(d), T(0)); }
  static Tensor full(std::vector<int> d, T x) { return Tensor(std::move(d), x); }

  static Tensor randn(std::vector<int> d, T stddev, std::uint64_t seed) {
    Tensor t(std::move(d));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (auto& x : t.v) x = static_cast<T>(dist(rng));
    return t;
  }

  static Tensor rand_uniform(std::vector<int> d, T lo, T hi, std::uint64_t seed) {
    Tensor t(std::move(d));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                static_cast<double>(hi));
    for (auto& x : t.v) x = static_cast<T>(dist(rng));
    return t;
  }
};

template <class T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]);
    acc += d * d;
  }
  return a.size() ? acc / static_cast<double>(a.size()) : 0.0;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    double d = std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]));
    if (d > m) m = d;
  }
  return m;
}

}  // namespace mtac

#endif  // MTAC_TENSOR_HPP_
