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

// Closed-loop evaluation with chunked execution.

#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "rldx/trainer/data.hpp"

namespace rldx::trainer {

using FrameHistory = std::vector<std::vector<float>>;

/// Produces action chunks at decision points.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset(const envs::Env& env, std::uint64_t episode_seed) = 0;
  /// Raw actions for steps t, t+1, ...; `frames` holds frames 0..t.
  virtual std::vector<std::vector<double>> plan(const envs::Env& env, const FrameHistory& frames, std::size_t t) = 0;
  /// Called once per step after any planning at that step.
  virtual void tick(const envs::Env&, const FrameHistory&, std::size_t) {}
};

class ExpertController : public Controller {
 public:
  void reset(const envs::Env&, std::uint64_t) override {}
  std::vector<std::vector<double>> plan(const envs::Env& env, const FrameHistory&, std::size_t) override {
    return {env.expert_action()};
  }
};

class RandomController : public Controller {
 public:
  void reset(const envs::Env&, std::uint64_t seed) override { rng_.seed(seed ^ 0xA5A5A5A5ULL); }
  std::vector<std::vector<double>> plan(const envs::Env& env, const FrameHistory&, std::size_t) override {
    return {envs::random_action(env.kind(), rng_)};
  }

 private:
  std::mt19937_64 rng_;
};

struct PolicyRunOptions {
  std::size_t T = 4;
  double temperature = 1.0;
  bool use_memory = true;
  bool use_physics = true;
  std::optional<int> advantage;
};

/// Runs a trained policy: encode, fuse memory, sample a chunk by Euler integration.
class PolicyController : public Controller {
 public:
  PolicyController(const Policy& policy, PolicyRunOptions opt) : policy_(policy), opt_(opt) {}

  void reset(const envs::Env&, std::uint64_t seed) override {
    rng_.seed(seed * 0x9E3779B97F4A7C15ULL + 17);
    queue_.emplace(policy_.config().mem.capacity, policy_.config().mem.interval);
    cached_t_ = -1;
  }

  /// Conditioning for the decision at step t (also used by critics and best-of-N).
  Conditioning condition(const envs::Env& env, const FrameHistory& frames, std::size_t t) {
    NoGradGuard ng;
    const auto& pc = policy_.config();
    const auto spec = env.spec();
    const auto& st = policy_.stats_for(spec.embodiment_id);
    auto obs = env.observe();
    Conditioning c;
    c.embodiment = spec.embodiment_id;
    c.h = cognition_at(spec, frames, t);
    c.m = (opt_.use_memory && pc.use_memory) ? policy_.memory_feature(queue_->features(), c.h)
                                             : Tensor::zeros({pc.enc.n_q, pc.enc.d});
    auto sv = flow::normalize(obs.state, st.state);
    c.state = Tensor::from_vector({sv.size()}, sv);
    if (opt_.use_physics && spec.physics_dim > 0) {
      auto pv = flow::normalize(obs.physics, st.physics);
      c.p_now = Tensor::from_vector({pv.size()}, pv);
    }
    c.advantage = opt_.advantage;
    return c;
  }

  /// Denormalized rows of a normalized chunk.
  std::vector<std::vector<double>> to_actions(const Tensor& chunk, std::size_t embodiment) const {
    const auto& st = policy_.stats_for(embodiment);
    const std::size_t rows = chunk.shape()[0], dim = chunk.shape()[1];
    std::vector<std::vector<double>> out;
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> row(chunk.values().begin() + std::ptrdiff_t(r * dim),
                              chunk.values().begin() + std::ptrdiff_t((r + 1) * dim));
      out.push_back(flow::denormalize(row, st.action));
    }
    return out;
  }

  std::vector<std::vector<double>> plan(const envs::Env& env, const FrameHistory& frames, std::size_t t) override {
    NoGradGuard ng;
    Conditioning c = condition(env, frames, t);
    auto res = policy_.sample(c, opt_.T, opt_.temperature, rng_);
    return to_actions(res.action, c.embodiment);
  }

  void tick(const envs::Env& env, const FrameHistory& frames, std::size_t t) override {
    const auto& pc = policy_.config();
    if (!(opt_.use_memory && pc.use_memory) || t % pc.mem.interval != 0) return;
    NoGradGuard ng;
    queue_->push(long(t), cognition_at(env.spec(), frames, t));
  }

  std::mt19937_64& rng() { return rng_; }
  const Policy& policy() const { return policy_; }

 private:
  Tensor cognition_at(const envs::EnvSpec& spec, const FrameHistory& frames, std::size_t t) {
    if (cached_t_ == long(t)) return cached_h_;
    const auto& cfg = policy_.config().enc;
    auto src = [&](std::size_t i) { return to_canvas(frames.at(i), spec, cfg); };
    cached_h_ = policy_.cognition(encoder::patchify(window_at(src, t, cfg), cfg), spec.task_id);
    cached_t_ = long(t);
    return cached_h_;
  }

  const Policy& policy_;
  PolicyRunOptions opt_;
  std::mt19937_64 rng_;
  std::optional<memory::MemoryQueue> queue_;
  long cached_t_ = -1;
  Tensor cached_h_;
};

struct EvalOptions {
  std::size_t episodes = 200;
  std::uint64_t seed = 0;
  std::size_t exec_horizon = 1;
  envs::EnvOptions env;
};

struct EvalResult {
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double mean_length = 0.0;
  double mean_success_length = 0.0;  // 0 when nothing succeeded
  std::vector<std::size_t> lengths;
  std::vector<bool> success;
};

/// One closed-loop episode: every m steps the controller re-plans and the first m actions run.
/// Returns the recorded episode (observations and executed actions before each step).
inline envs::EpisodeRecord run_episode(envs::EnvKind kind, Controller& ctrl, std::uint64_t seed, std::size_t m,
                                       const envs::EnvOptions& env_opt = {}) {
  auto env = envs::make_env(kind, seed, env_opt);
  ctrl.reset(*env, seed);
  envs::Recorder rec(*env, seed);
  envs::Observation obs = env->observe();
  FrameHistory frames{obs.frame};
  std::vector<std::vector<double>> pending;
  std::size_t cursor = 0, since = 0;
  while (!env->done()) {
    const std::size_t t = env->steps();
    if (cursor >= pending.size() || since >= m) {
      auto chunk = ctrl.plan(*env, frames, t);
      if (chunk.empty()) throw ContractError("controller returned an empty chunk");
      pending.assign(chunk.begin(), chunk.begin() + std::ptrdiff_t(std::min(m, chunk.size())));
      cursor = 0;
      since = 0;
    }
    ctrl.tick(*env, frames, t);
    const auto& a = pending[cursor++];
    auto res = env->step(a);
    rec.add(obs, a, res.reward);
    ++since;
    obs = res.obs;
    frames.push_back(obs.frame);
  }
  rec.rec.success = env->success();
  return rec.rec;
}

/// Episode i uses env seed `seed + i`.
inline EvalResult evaluate(envs::EnvKind kind, Controller& ctrl, const EvalOptions& opt,
                           std::size_t max_chunk = std::numeric_limits<std::size_t>::max()) {
  if (opt.exec_horizon < 1 || opt.exec_horizon > max_chunk) throw ConfigError("execution horizon must be in [1, H+1]");
  EvalResult r;
  double len_all = 0, len_ok = 0;
  for (std::size_t i = 0; i < opt.episodes; ++i) {
    auto ep = run_episode(kind, ctrl, opt.seed + i, opt.exec_horizon, opt.env);
    r.lengths.push_back(ep.length());
    r.success.push_back(ep.success);
    len_all += double(ep.length());
    if (ep.success) {
      ++r.successes;
      len_ok += double(ep.length());
    }
  }
  r.episodes = opt.episodes;
  if (r.episodes > 0) {
    r.success_rate = double(r.successes) / double(r.episodes);
    r.mean_length = len_all / double(r.episodes);
  }
  if (r.successes > 0) r.mean_success_length = len_ok / double(r.successes);
  return r;
}

inline EvalResult evaluate_policy(envs::EnvKind kind, const Policy& policy, const EvalOptions& opt,
                                  const PolicyRunOptions& run) {
  PolicyController ctrl(policy, run);
  return evaluate(kind, ctrl, opt, policy.config().msat.chunk());
}

}  // namespace rldx::trainer
