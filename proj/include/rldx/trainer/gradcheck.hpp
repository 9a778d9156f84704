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

// Finite-difference audit of the complete training loss: encoder, memory,
// action transformer (both phases, physics stream on) and flow matching.

#include <algorithm>
#include <random>

#include "rldx/envs/episode.hpp"
#include "rldx/numerics/gradcheck.hpp"
#include "rldx/trainer/trainer.hpp"

namespace rldx::trainer {

/// d=16, 2+2 transformer blocks, chunk of 4, memory and physics enabled.
inline PolicyConfig tiny_policy_config() {
  PolicyConfig c;
  c.enc.n_layers = 3;
  c.enc.patch_w = 4;
  c.enc.compress_layer_index = 2;
  c.enc.extract_layer_index = 3;
  c.msat.H = 3;
  c.msat.L = 4;
  c.mem.interval = 4;
  c.mem.capacity = 2;
  c.use_memory = true;
  c.use_physics = true;
  return c;
}

struct FullLossCheck {
  GradCheckResult result;
  std::size_t n_params = 0;
  double loss = 0.0;
};

/// Gradient check of the flow-matching loss on two fixed samples (a probe step with physics and
/// memory, a conveyor step with memory). Every `stride`-th coordinate of each tensor is probed.
inline FullLossCheck full_loss_gradcheck(const PolicyConfig& cfg, std::uint64_t seed, double eps = 1e-5,
                                         std::size_t stride = 1) {
  Policy policy(cfg, seed);
  // Zero-initialized projections (memory output, residual heads) would leave downstream norms at
  // their singular point; give them random values. Open the physics gate so P contributes.
  std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
  std::uniform_real_distribution<double> u(-0.02, 0.02);
  for (auto& [name, p] : policy.params()) {
    auto v = p.mutable_data();
    if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
      for (auto& x : v) x = u(rng);
    }
  }
  if (policy.params().contains("phys.gate")) policy.params().get("phys.gate").mutable_data()[0] = 0.5;
  TrainSet set;
  set.episodes.push_back(envs::rollout_expert(envs::EnvKind::kProbe, seed));
  set.episodes.push_back(envs::rollout_expert(envs::EnvKind::kConveyor, seed));
  ensure_stats(policy, {set});
  const std::size_t t = 2 * cfg.msat.chunk() + 1;
  std::vector<Sample> samples;
  for (const auto& e : set.episodes) samples.push_back(build_sample(e, std::min(t, e.length() - 1), policy, true, true));
  std::vector<std::vector<Tensor>> entries;
  {
    NoGradGuard ng;
    for (const auto& s : samples) {
      entries.emplace_back();
      for (const auto& mp : s.memory_patches) entries.back().push_back(policy.cognition(mp, s.task));
    }
  }
  auto loss = [&] {
    std::vector<flow::FieldFn> fns;
    std::vector<flow::FlowTarget> targets;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      Conditioning c;
      c.embodiment = s.embodiment;
      c.h = policy.cognition(s.patches, s.task);
      c.m = policy.memory_feature(entries[i], c.h);
      c.state = s.state;
      c.p_now = s.p_now;
      fns.push_back(policy.field_fn(c));
      targets.push_back(s.target);
    }
    std::mt19937_64 rng(seed + 1);
    return flow::fm_loss(fns, targets, 1.0, {}, rng);
  };
  FullLossCheck out;
  for (const auto& [name, p] : policy.params()) out.n_params += p.numel();
  out.loss = loss().item();
  out.result = finite_diff_check_detailed(loss, policy.params(), eps, stride);
  return out;
}

}  // namespace rldx::trainer
