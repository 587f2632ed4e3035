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

#ifndef MTAC_OPTIMIZER_HPP_
#define MTAC_OPTIMIZER_HPP_

#include <cmath>
#include <map>
#include <string>

#include "mtac/params.hpp"
#include "mtac/tensor.hpp"

namespace mtac {

// Adam with the usual defaults. Moments are kept in double no matter what
// the parameter scalar type is; updates only touch non-frozen parameters.
template <class T>
class Adam {
 public:
  explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  // grads: parameter name -> averaged gradient tensor.
  void step(ParamStore<T>& params,
            const std::map<std::string, Tensor<double>>& grads) {
    ++t_;
    double c1 = 1.0 - std::pow(beta1_, t_);
    double c2 = 1.0 - std::pow(beta2_, t_);
    for (const auto& [name, g] : grads) {
      auto& p = params.at(name);
      if (p.frozen) continue;
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.v.empty()) {
        m = Tensor<double>::zeros(p.value.dims);
        v = Tensor<double>::zeros(p.value.dims);
      }
      for (std::int64_t i = 0; i < g.size(); ++i) {
        double gi = g.v[i];
        m.v[i] = beta1_ * m.v[i] + (1.0 - beta1_) * gi;
        v.v[i] = beta2_ * v.v[i] + (1.0 - beta2_) * gi * gi;
        double mh = m.v[i] / c1;
        double vh = v.v[i] / c2;
        p.value.v[i] = static_cast<T>(static_cast<double>(p.value.v[i]) -
                                      lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor<double>> m_, v_;
};

}  // namespace mtac

#endif  // MTAC_OPTIMIZER_HPP_
