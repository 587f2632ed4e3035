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

#ifndef MTAC_TESTS_GRADCHECK_HPP_
#define MTAC_TESTS_GRADCHECK_HPP_

#include <functional>
#include <random>
#include <vector>

#include "mtac/autodiff.hpp"
#include "mtac/tensor.hpp"

namespace mtac::testutil {

using BuildFn = std::function<ag::Var<double>(ag::Tape<double>&,
                                              std::vector<ag::Var<double>>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};

// Central-difference check of analytic gradients for a scalar-valued graph.
// Samples a handful of coordinates per input in 64-bit precision.
inline GradCheckResult gradcheck(const BuildFn& build,
                                 std::vector<Tensor<double>> inputs,
                                 int samples_per_input = 6, double eps = 1e-5,
                                 std::uint64_t seed = 1234) {
  std::vector<Tensor<double>> analytic;
  {
    ag::Tape<double> tape;
    std::vector<ag::Var<double>> leafs;
    for (auto& t : inputs) leafs.push_back(tape.leaf(t, true));
    auto loss = build(tape, leafs);
    tape.backward(loss);
    for (auto& l : leafs)
      analytic.push_back(l.has_grad() ? l.grad()
                                      : Tensor<double>::zeros(l.val().dims));
  }
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    ag::Tape<double> tape(false);
    std::vector<ag::Var<double>> leafs;
    for (auto& t : xs) leafs.push_back(tape.leaf(t, false));
    auto mutable_xs = xs;  // build may not mutate; keep leafs const
    return build(tape, leafs).val().v[0];
  };
  std::mt19937_64 rng(seed);
  GradCheckResult res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::int64_t n = inputs[i].size();
    for (int s = 0; s < samples_per_input && s < n; ++s) {
      std::int64_t j = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n));
      double keep = inputs[i].v[j];
      inputs[i].v[j] = keep + eps;
      double lp = eval(inputs);
      inputs[i].v[j] = keep - eps;
      double lm = eval(inputs);
      inputs[i].v[j] = keep;
      double fd = (lp - lm) / (2 * eps);
      double an = analytic[i].v[j];
      double denom = std::max({1e-7, std::abs(fd), std::abs(an)});
      double rel = std::abs(fd - an) / denom;
      if (rel > res.max_rel_err) res.max_rel_err = rel;
      ++res.checked;
    }
  }
  return res;
}

}  // namespace mtac::testutil

#endif  // MTAC_TESTS_GRADCHECK_HPP_
