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

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "rldx/numerics/params.hpp"

namespace rldx {

enum class LrSchedule { kConstant, kCosine };

/// Linear warmup over the first `warmup_frac` of steps, then constant or cosine decay.
inline double lr_at(std::size_t step, std::size_t total, double base, double warmup_frac, LrSchedule kind) {
  const double warm = std::floor(warmup_frac * double(total));
  if (warm > 0 && double(step) < warm) return base * (double(step) + 1.0) / warm;
  if (kind == LrSchedule::kConstant) return base;
  const double span = std::max(1.0, double(total) - warm);
  const double prog = std::min(1.0, (double(step) - warm) / span);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * prog));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global norm; <= 0 disables
};

/// Decoupled-weight-decay Adam. Parameters rejected by `trainable` are left untouched.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params, double lr,
            const std::function<bool(const std::string&)>& trainable = nullptr) {
    ++t_;
    double scale = 1.0;
    if (cfg_.grad_clip > 0) {
      double ss = 0;
      for (auto& [name, p] : params) {
        if (!p.has_grad() || (trainable && !trainable(name))) continue;
        for (double g : p.grad()) ss += g * g;
      }
      const double norm = std::sqrt(ss);
      if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (auto& [name, p] : params) {
      if (!p.has_grad() || (trainable && !trainable(name))) continue;
      auto& st = state_[name];
      if (st.m.size() != p.numel()) {
        st.m.assign(p.numel(), 0.0);
        st.v.assign(p.numel(), 0.0);
      }
      auto data = p.mutable_data();
      auto grad = p.grad();
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double g = grad[i] * scale;
        st.m[i] = cfg_.beta1 * st.m[i] + (1 - cfg_.beta1) * g;
        st.v[i] = cfg_.beta2 * st.v[i] + (1 - cfg_.beta2) * g * g;
        const double mh = st.m[i] / bc1, vh = st.v[i] / bc2;
        data[i] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * data[i]);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace rldx
