// Copyright (c) 2026 Accentfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "core/tensor.h"

namespace af::test {

// Central finite-difference oracle: rebuilds the scalar loss via `loss_fn`
// (which must read the current parameter values each call), perturbs every
// entry of every parameter, and compares against the analytic gradient left
// in param.grad by a prior backward(). Returns the max relative error with a
// floored denominator.
inline double max_grad_rel_error(std::vector<Tensor<double>> params,
                                 const std::function<double()>& loss_fn,
                                 double h = 1e-5, double denom_floor = 1e-3) {
  double worst = 0.0;
  for (auto& p : params) {
    auto& data = p.data();
    const auto& g = p.grad();
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double lp = loss_fn();
      data[i] = saved - h;
      const double lm = loss_fn();
      data[i] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(g[i]), denom_floor});
      worst = std::max(worst, std::abs(fd - g[i]) / denom);
    }
  }
  return worst;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline float max_abs_diff(const std::vector<float>& a,
                          const std::vector<float>& b) {
  float m = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace af::test
