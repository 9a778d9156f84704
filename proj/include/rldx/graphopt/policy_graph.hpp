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

// Capture of one full inference call of the policy: encoder, memory and every
// denoising step, with observation, memory entries, state and initial noise as
// graph inputs.

#include <random>

#include "rldx/flow/flow.hpp"
#include "rldx/graphopt/cost.hpp"
#include "rldx/graphopt/passes.hpp"
#include "rldx/trainer/policy.hpp"

namespace rldx::graphopt {

struct PolicyGraphSpec {
  std::size_t embodiment = 0;
  std::size_t task = 0;
  std::size_t steps = 4;            // denoising steps
  std::size_t memory_entries = 2;   // past cognition features fed to memory
  bool physics = false;             // include the P stream (embodiment must have one)
  std::optional<int> advantage;
};

struct PolicyCapture {
  OpGraph graph;
  std::vector<Tensor> example;  // inputs used during capture
};

inline PolicyCapture capture_policy(const Policy& policy, const PolicyGraphSpec& spec, std::uint64_t seed = 0) {
  const auto& cfg = policy.config();
  const auto emb = cfg.registry.at(spec.embodiment);
  if (spec.physics && emb.physics_dim == 0) throw ConfigError("capture_policy: embodiment has no physics channel");
  if (spec.memory_entries > cfg.mem.capacity) throw ConfigError("capture_policy: more memory entries than capacity");
  std::mt19937_64 rng(seed);
  std::vector<Tensor> ex;
  ex.push_back(flow::gaussian({cfg.enc.frames() * cfg.enc.patches_per_frame(), cfg.enc.patch_dim()}, 1.0, rng));
  for (std::size_t i = 0; i < spec.memory_entries; ++i) ex.push_back(flow::gaussian({cfg.enc.n_q, cfg.enc.d}, 1.0, rng));
  ex.push_back(flow::gaussian({emb.state_dim}, 1.0, rng));
  ex.push_back(flow::gaussian(policy.action_shape(spec.embodiment), 1.0, rng));
  if (spec.physics) {
    ex.push_back(flow::gaussian({emb.physics_dim}, 1.0, rng));
    ex.push_back(flow::gaussian({cfg.msat.L, emb.physics_dim}, 1.0, rng));
  }
  Forward fwd = [&policy, spec](const std::vector<Tensor>& in) {
    std::size_t i = 0;
    Tensor patches = in[i++];
    std::vector<Tensor> entries(in.begin() + 1, in.begin() + 1 + long(spec.memory_entries));
    i += spec.memory_entries;
    Conditioning c;
    c.embodiment = spec.embodiment;
    c.h = policy.cognition(patches, spec.task);
    c.m = policy.memory_feature(entries, c.h);
    c.state = in[i++];
    c.advantage = spec.advantage;
    Tensor a0 = in[i++];
    Tensor p0;
    if (spec.physics) {
      c.p_now = in[i++];
      p0 = in[i++];
    }
    auto r = flow::euler_integrate(policy.field_fn(c), a0, p0, spec.steps);
    std::vector<Tensor> out{r.action};
    if (r.physics.defined()) out.push_back(r.physics);
    return out;
  };
  return {capture(fwd, ex), ex};
}

/// The three graphs compared by the benchmark.
struct GraphVariants {
  OpGraph eager;   // as captured
  OpGraph folded;  // constants precomputed
  OpGraph fused;   // folded, then fused
  FusionStats stats;
};

inline GraphVariants optimize(const OpGraph& eager) {
  GraphVariants v;
  v.eager = eager;
  v.folded = fold_constants(eager);
  v.fused = fuse(v.folded, &v.stats);
  return v;
}

}  // namespace rldx::graphopt
