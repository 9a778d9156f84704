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

// Iterated offline RL: roll out, refine the progress critic on successes,
// label chunks by advantage, retrain the policy conditioned on the label.

#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"

#include "rldx/rl/rl.hpp"
#include "rldx/trainer/evaluate.hpp"
#include "rldx/trainer/trainer.hpp"

namespace rldx::rl {

/// Per-step critic input: mean-pooled cognition feature followed by the normalized state.
inline std::vector<std::vector<double>> critic_features(const Policy& policy, const envs::EpisodeRecord& e) {
  NoGradGuard ng;
  const auto& st = policy.stats_for(e.embodiment_id);
  std::vector<std::vector<double>> out;
  for (std::size_t t = 0; t < e.length(); ++t) {
    Tensor h = policy.cognition(trainer::episode_patches(e, t, policy.config().enc), e.task_id);
    std::vector<double> x = mean_rows(h).values();
    auto s = flow::normalize(trainer::to_double(e.state(t)), st.state);
    x.insert(x.end(), s.begin(), s.end());
    out.push_back(std::move(x));
  }
  return out;
}

struct RecapConfig {
  std::size_t n_rollouts = 100;
  std::uint64_t rollout_seed = 1'000'000;
  std::size_t exec_horizon = 1;
  trainer::PolicyRunOptions run;
  envs::EnvOptions env;
  CriticTrainConfig critic;
  trainer::StageConfig policy_stage;  // advantage-conditioned policy training
  std::uint64_t critic_seed = 7;
};

struct RecapState {
  Policy policy;
  ProgressCritic critic;
  std::vector<envs::EpisodeRecord> dataset;
  AdvantageLabels labels;
  bool conditioned = false;  // policy trained with the advantage indicator
  std::size_t iteration = 0;
  Policy critic_policy;  // feature extractor the current critic was fitted with
};

struct RecapReport {
  std::size_t rollouts = 0;
  std::size_t rollout_successes = 0;
  std::vector<double> critic_losses;
  std::vector<double> policy_losses;
};

/// Critic refit on the successful episodes of the dataset.
inline ProgressCritic fit_progress_critic(const Policy& policy, const std::vector<envs::EpisodeRecord>& dataset,
                                          const CriticTrainConfig& cfg, std::uint64_t seed,
                                          std::vector<double>* losses = nullptr) {
  std::vector<std::vector<std::vector<double>>> feats;
  for (const auto& e : dataset) {
    if (e.success) feats.push_back(critic_features(policy, e));
  }
  if (feats.empty()) throw ContractError("progress critic needs successful demonstrations");
  ProgressCritic critic(feats.front().front().size(), seed);
  auto l = critic.train(feats, cfg);
  if (losses) *losses = std::move(l);
  return critic;
}

/// One iteration: rollouts -> critic on successes -> labels -> advantage-conditioned policy.
inline RecapReport recap_iterate(RecapState& st, envs::EnvKind kind, const RecapConfig& cfg) {
  RecapReport rep;
  trainer::PolicyRunOptions run = cfg.run;
  run.advantage = st.conditioned ? std::optional<int>(1) : std::nullopt;
  trainer::PolicyController ctrl(st.policy, run);
  for (std::size_t i = 0; i < cfg.n_rollouts; ++i) {
    const std::uint64_t seed = cfg.rollout_seed + st.iteration * cfg.n_rollouts + i;
    st.dataset.push_back(trainer::run_episode(kind, ctrl, seed, cfg.exec_horizon, cfg.env));
    rep.rollout_successes += st.dataset.back().success;
  }
  rep.rollouts = cfg.n_rollouts;

  st.critic_policy = st.policy.clone();
  st.critic = fit_progress_critic(st.policy, st.dataset, cfg.critic, cfg.critic_seed + st.iteration,
                                  &rep.critic_losses);
  std::vector<std::vector<std::vector<double>>> feats;
  for (const auto& e : st.dataset) feats.push_back(critic_features(st.policy, e));
  st.labels = annotate_advantages(st.critic, feats, st.policy.config().msat.H);

  trainer::TrainSet set;
  set.episodes = st.dataset;
  set.advantage = st.labels.bits;
  trainer::ensure_stats(st.policy, {set});
  const auto& frozen = cfg.policy_stage.frozen;
  auto trainable = [&](std::size_t, const std::string& name) { return !trainer::has_prefix(name, frozen); };
  auto tr = trainer::run_training(st.policy, cfg.policy_stage, {set}, trainable, LrSchedule::kConstant, nullptr);
  rep.policy_losses = std::move(tr.losses);
  st.conditioned = true;
  ++st.iteration;
  return rep;
}

/// Fraction of adjacent steps whose decoded critic value does not decrease.
inline double monotone_fraction(const ProgressCritic& critic, const Policy& policy,
                                const std::vector<envs::EpisodeRecord>& episodes) {
  std::size_t ok = 0, pairs = 0;
  for (const auto& e : episodes) {
    auto f = critic_features(policy, e);
    double prev = critic.value(f.front());
    for (std::size_t t = 1; t < f.size(); ++t) {
      const double v = critic.value(f[t]);
      ok += v >= prev;
      ++pairs;
      prev = v;
    }
  }
  return pairs ? double(ok) / double(pairs) : 1.0;
}

/// JSON sidecar of advantage labels for a dataset directory.
inline nlohmann::json labels_to_json(const AdvantageLabels& l) {
  return {{"threshold", l.threshold}, {"bits", l.bits}, {"delta", l.delta}};
}

inline AdvantageLabels labels_from_json(const nlohmann::json& j) {
  AdvantageLabels l;
  try {
    l.threshold = j.at("threshold").get<double>();
    l.bits = j.at("bits").get<std::vector<std::vector<int>>>();
    l.delta = j.at("delta").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("advantage labels malformed: ") + ex.what());
  }
  if (l.bits.size() != l.delta.size()) throw FormatError("advantage labels: bits/delta mismatch");
  return l;
}

}  // namespace rldx::rl
