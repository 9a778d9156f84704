// Copyright 2026 The RLDX Authors.
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

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "rldx/numerics/autograd.hpp"
#include "rldx/numerics/params.hpp"

namespace rldx {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

/// Central differences against reverse-mode gradients.
///
/// Per coordinate error is |g_a - g_n| / max(1e-8, |g_a| + |g_n|). When
/// `stride` > 1 only every stride-th coordinate of each tensor is probed.
inline GradCheckResult finite_diff_check_detailed(const std::function<Tensor()>& f, ParamStore& params,
                                                  double eps, std::size_t stride = 1) {
  params.zero_grad();
  backward(f());
  GradCheckResult res;
  NoGradGuard ng;
  for (auto& [name, t] : params) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.numel(), 0.0);
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < t.numel(); i += std::max<std::size_t>(1, stride)) {
      const double orig = data[i];
      data[i] = orig + eps;
      const double fp = f().item();
      data[i] = orig - eps;
      const double fm = f().item();
      data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      ++res.coords_checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = name;
        res.worst_index = i;
        res.worst_analytic = analytic[i];
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

inline double finite_diff_check(const std::function<Tensor()>& f, ParamStore& params, double eps) {
  return finite_diff_check_detailed(f, params, eps).max_rel_error;
}

}  // namespace rldx
