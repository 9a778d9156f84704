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

// Chunk-critic training data from recorded episodes and a closed-loop
// controller that executes the best of N sampled chunks.

#include <vector>

#include "rldx/rl/recap.hpp"
#include "rldx/rl/rl.hpp"
#include "rldx/trainer/evaluate.hpp"

namespace rldx::rl {

/// Critic config sized for `policy` on one embodiment.
inline ChunkCriticConfig chunk_critic_config(const Policy& policy, std::size_t embodiment) {
  const auto& pc = policy.config();
  ChunkCriticConfig c;
  c.obs_dim = pc.enc.d + pc.registry.at(embodiment).state_dim;
  c.chunk_len = pc.msat.chunk();
  c.chunk_dim = c.chunk_len * pc.registry.at(embodiment).action_dim;
  return c;
}

/// One transition per step t: features at t, normalized chunk t..t+H, chunk return, features at t+H+1.
/// A chunk that reaches the end of a successful episode is terminal; failed episodes bootstrap from the
/// last recorded step.
inline std::vector<ChunkTransition> chunk_transitions(const Policy& policy, const std::vector<envs::EpisodeRecord>& eps,
                                                      const ChunkCriticConfig& cfg) {
  std::vector<ChunkTransition> out;
  for (const auto& e : eps) {
    if (e.length() == 0) continue;
    const auto feats = critic_features(policy, e);
    const auto& st = policy.stats_for(e.embodiment_id);
    std::vector<double> r(e.rewards.begin(), e.rewards.end());
    for (std::size_t t = 0; t < e.length(); ++t) {
      ChunkTransition tr;
      tr.obs = feats[t];
      tr.chunk = trainer::chunk_rows(e, e.actions, e.action_dim, t, cfg.chunk_len, st.action).values();
      tr.ret = chunk_return(r, t, cfg.chunk_len, cfg.gamma1);
      const std::size_t nt = t + cfg.chunk_len;
      tr.terminal = e.success && nt >= e.length();
      tr.next_obs = feats[std::min(nt, e.length() - 1)];
      out.push_back(std::move(tr));
    }
  }
  return out;
}

/// Re-plans by drawing N chunks at `temperature` and executing the one with the highest min(Q1, Q2).
class BestOfNController : public trainer::Controller {
 public:
  BestOfNController(const Policy& policy, const ChunkCritic& critic, trainer::PolicyRunOptions opt, std::size_t n)
      : inner_(policy, opt), critic_(critic), opt_(opt), n_(n) {
    if (n_ < 1) throw ConfigError("best-of-N: N must be >= 1");
  }

  void reset(const envs::Env& env, std::uint64_t seed) override { inner_.reset(env, seed); }

  std::vector<std::vector<double>> plan(const envs::Env& env, const trainer::FrameHistory& frames,
                                        std::size_t t) override {
    NoGradGuard ng;
    Conditioning c = inner_.condition(env, frames, t);
    std::vector<double> obs = mean_rows(c.h).values();
    obs.insert(obs.end(), c.state.values().begin(), c.state.values().end());
    const Policy& p = inner_.policy();
    auto sample = [&](std::mt19937_64& rng) { return p.sample(c, opt_.T, opt_.temperature, rng).action; };
    auto score = [&](const Tensor& chunk) { return critic_.score(obs, chunk.values()); };
    auto best = best_of_n(sample, score, n_, inner_.rng());
    return inner_.to_actions(best.chunk, c.embodiment);
  }

  void tick(const envs::Env& env, const trainer::FrameHistory& frames, std::size_t t) override {
    inner_.tick(env, frames, t);
  }

 private:
  trainer::PolicyController inner_;
  const ChunkCritic& critic_;
  trainer::PolicyRunOptions opt_;
  std::size_t n_;
};

}  // namespace rldx::rl
