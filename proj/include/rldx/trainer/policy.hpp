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

// Full policy: encoder -> memory -> MSAT, plus per-embodiment normalization.

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rldx/encoder/encoder.hpp"
#include "rldx/flow/flow.hpp"
#include "rldx/memory/memory.hpp"
#include "rldx/msat/msat.hpp"

namespace rldx {

struct PolicyConfig {
  encoder::EncoderConfig enc;
  memory::MemoryConfig mem;
  msat::MsatConfig msat;
  msat::Registry registry = msat::Registry::defaults();
  bool use_memory = false;
  bool use_physics = false;

  void validate() const {
    enc.validate();
    msat.validate();
    if (mem.d != enc.d || msat.d_model != enc.d) throw ConfigError("policy: encoder/memory/msat widths differ");
    if (mem.n_q != enc.n_q) throw ConfigError("policy: memory n_q differs from encoder n_q");
    if (mem.interval != msat.chunk()) throw ConfigError("policy: memory interval must equal H+1");
  }
};

/// Everything the action model conditions on at one decision point.
struct Conditioning {
  std::size_t embodiment = 0;
  bool agnostic = false;
  Tensor h;       // [n_q, d]
  Tensor m;       // [n_q, d]
  Tensor state;   // normalized [state_dim]
  Tensor p_now;   // normalized [physics_dim] or undefined (P stream absent)
  std::optional<int> advantage;
};

class Policy {
 public:
  Policy() = default;
  Policy(PolicyConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    encoder::init_params(params_, cfg_.enc, rng);
    memory::init_params(params_, cfg_.mem, rng);
    msat::init_trunk(params_, cfg_.msat, rng);
    msat::init_physics_stream(params_, cfg_.msat, rng);
    for (const auto& e : cfg_.registry.list()) {
      msat::init_head(params_, e, cfg_.msat, rng);
      msat::init_physics_head(params_, e, cfg_.msat, rng);
    }
    const auto ag = cfg_.registry.head_dims(msat::kAgnostic);
    msat::init_head(params_, ag, cfg_.msat, rng);
    msat::init_physics_head(params_, ag, cfg_.msat, rng);
  }

  /// Deep copy; a plain copy shares parameter storage.
  Policy clone() const {
    Policy p;
    p.cfg_ = cfg_;
    p.params_ = params_.clone();
    p.stats_ = stats_;
    return p;
  }

  PolicyConfig& config() { return cfg_; }
  const PolicyConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::map<std::size_t, flow::NormStats>& stats() { return stats_; }
  const std::map<std::size_t, flow::NormStats>& stats() const { return stats_; }
  const flow::NormStats& stats_for(std::size_t embodiment) const {
    auto it = stats_.find(embodiment);
    if (it == stats_.end()) throw ContractError("no normalization statistics for embodiment " + std::to_string(embodiment));
    return it->second;
  }

  Tensor cognition(const Tensor& patches, std::size_t task) const {
    return encoder::encode_patches(patches, task, params_, cfg_.enc);
  }

  /// m_t; zeros when the memory module is disabled.
  Tensor memory_feature(const std::vector<Tensor>& entries, const Tensor& h) const {
    if (!cfg_.use_memory) return Tensor::zeros({cfg_.enc.n_q, cfg_.enc.d});
    return memory::memory_forward(entries, h, params_, cfg_.mem);
  }

  bool physics_active(const Conditioning& c) const {
    return cfg_.use_physics && c.p_now.defined() && cfg_.registry.at(c.embodiment).physics_dim > 0;
  }

  flow::Field velocity(const Conditioning& c, const Tensor& a, const Tensor& p, double tau) const {
    msat::ProjectInputs in;
    in.embodiment = c.agnostic ? msat::kAgnostic : c.embodiment;
    in.source_embodiment = c.embodiment;
    in.state = c.state;
    in.a_noisy = a;
    in.h = c.h;
    in.m = c.m;
    in.tau = Tensor::scalar(tau);
    in.advantage = c.advantage;
    if (physics_active(c)) {
      in.p_now = c.p_now;
      in.p_noisy_future = p;
    }
    auto out = msat::msat_forward(in, params_, cfg_.registry, cfg_.msat);
    return {out.v_action, out.v_physics};
  }

  flow::FieldFn field_fn(const Conditioning& c) const {
    return [this, c](const Tensor& a, const Tensor& p, double tau) { return velocity(c, a, p, tau); };
  }

  Shape action_shape(std::size_t embodiment) const {
    return {cfg_.msat.chunk(), cfg_.registry.at(embodiment).action_dim};
  }
  Shape physics_shape(const Conditioning& c) const {
    if (!physics_active(c)) return {};
    return {cfg_.msat.L, cfg_.registry.at(c.embodiment).physics_dim};
  }

  /// Normalized chunk sampled by Euler integration.
  flow::SampleResult sample(const Conditioning& c, std::size_t T, double temperature, std::mt19937_64& rng) const {
    return flow::euler_sample(field_fn(c), action_shape(c.embodiment), physics_shape(c), T, temperature, rng);
  }

 private:
  PolicyConfig cfg_;
  ParamStore params_;
  std::map<std::size_t, flow::NormStats> stats_;
};

}  // namespace rldx
