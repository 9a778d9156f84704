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

// Three training stages over recorded episodes.

#include <functional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "rldx/numerics/autograd.hpp"
#include "rldx/numerics/optim.hpp"
#include "rldx/trainer/data.hpp"

namespace rldx::trainer {

enum class Stage { kPretrain, kMidtrain, kFinetune };

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kPretrain: return "pretrain";
    case Stage::kMidtrain: return "midtrain";
    case Stage::kFinetune: return "finetune";
  }
  return "?";
}

inline Stage stage_from_name(const std::string& s) {
  if (s == "pretrain") return Stage::kPretrain;
  if (s == "midtrain") return Stage::kMidtrain;
  if (s == "finetune") return Stage::kFinetune;
  throw ConfigError("unknown stage: " + s);
}

struct StageConfig {
  Stage stage = Stage::kPretrain;
  std::size_t steps = 3000;
  std::size_t batch = 64;
  double lr = 2e-3;
  double warmup_frac = 0.05;
  double modality_dropout = 0.3;
  double state_dropout = 0.0;
  double agnostic_fraction = 1.0 / 32.0;
  std::size_t alignment_warmup = 100;
  std::size_t trainable_top_layers = 2;  // finetune: encoder layers left trainable
  std::vector<std::string> frozen;       // extra frozen parameter-name prefixes
  double advantage_dropout = 0.0;        // fraction of labelled samples trained without the indicator
  double lambda_p = 1.0;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw ConfigError("stage: steps must be >= 1");
    if (batch < 1) throw ConfigError("stage: batch must be >= 1");
    if (!(lr > 0)) throw ConfigError("stage: learning rate must be positive");
    for (double r : {warmup_frac, modality_dropout, state_dropout, agnostic_fraction, advantage_dropout}) {
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("stage: rates must lie in [0,1]");
    }
  }
};

/// Episodes of one dataset variant; `advantage` is empty or holds one label per step of each episode.
struct TrainSet {
  std::vector<envs::EpisodeRecord> episodes;
  std::vector<std::vector<int>> advantage;
};

/// Per-sample modality drops.
struct DropDecision {
  bool memory = false;
  bool physics = false;
  bool state = false;
};

inline DropDecision draw_dropout(const StageConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DropDecision d;
  d.memory = u(rng) < cfg.modality_dropout;
  d.physics = u(rng) < cfg.modality_dropout;
  d.state = u(rng) < cfg.state_dropout;
  return d;
}

/// Parameters introduced by mid-training (motion, memory, physics).
inline bool is_expansion_param(const std::string& name) {
  for (const char* p : {"enc.stss.", "mem.", "phys."}) {
    if (name.rfind(p, 0) == 0) return true;
  }
  for (const char* p : {".pnow.", ".pfut.", ".pout."}) {
    if (name.find(p) != std::string::npos) return true;
  }
  return false;
}

inline bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (name.rfind(p, 0) == 0) return true;
  }
  return false;
}

/// Encoder params frozen by fine-tuning: everything but the top `top` layers and the final norm.
inline bool is_frozen_encoder_param(const std::string& name, std::size_t n_layers, std::size_t top) {
  if (name.rfind("enc.", 0) != 0) return false;
  if (name == "enc.final_norm") return false;
  for (std::size_t l = n_layers - std::min(top, n_layers); l < n_layers; ++l) {
    if (name.rfind("enc.l" + std::to_string(l) + ".", 0) == 0) return false;
  }
  return true;
}

struct TrainReport {
  std::vector<double> losses;
  std::size_t memory_drops = 0, physics_drops = 0, samples = 0;
};

/// Per-embodiment statistics for every embodiment in `sets` that has none yet.
inline void ensure_stats(Policy& policy, const std::vector<TrainSet>& sets) {
  std::map<std::size_t, std::vector<const envs::EpisodeRecord*>> by_emb;
  for (const auto& s : sets) {
    for (const auto& e : s.episodes) by_emb[e.embodiment_id].push_back(&e);
  }
  for (const auto& [id, eps] : by_emb) {
    if (!policy.stats().count(id)) policy.stats()[id] = compute_norm_stats(eps);
  }
}

inline void check_sets(const std::vector<TrainSet>& sets) {
  if (sets.empty()) throw ContractError("training needs at least one dataset");
  for (const auto& s : sets) {
    if (s.episodes.empty()) throw ContractError("training dataset is empty");
    if (!s.advantage.empty() && s.advantage.size() != s.episodes.size()) {
      throw ContractError("advantage labels do not match the episodes");
    }
    for (std::size_t i = 0; i < s.advantage.size(); ++i) {
      if (s.advantage[i].size() != s.episodes[i].length()) throw ContractError("advantage labels per step mismatch");
    }
    for (const auto& e : s.episodes) {
      if (e.length() == 0) throw ContractError("training episode has no steps");
    }
  }
}

/// Generic optimisation loop shared by the stages.
/// `trainable(step, name)` selects which parameters the optimizer may touch at a step.
inline TrainReport run_training(Policy& policy, const StageConfig& cfg, const std::vector<TrainSet>& sets,
                                const std::function<bool(std::size_t, const std::string&)>& trainable,
                                LrSchedule schedule, std::ostream* log) {
  cfg.validate();
  check_sets(sets);
  std::mt19937_64 rng(cfg.seed);
  AdamW opt({0.9, 0.999, 1e-8, cfg.weight_decay, cfg.grad_clip});
  const auto& pc = policy.config();
  TrainReport rep;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t n_agnostic = std::size_t(std::llround(cfg.agnostic_fraction * double(cfg.batch)));
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<flow::FieldFn> fns;
    std::vector<flow::FlowTarget> targets;
    std::vector<Conditioning> conds;
    // Agnostic-routed slots within the batch.
    std::vector<std::size_t> order(cfg.batch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> agnostic(cfg.batch, false);
    for (std::size_t i = 0; i < n_agnostic && i < cfg.batch; ++i) agnostic[order[i]] = true;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto& set = sets[std::uniform_int_distribution<std::size_t>(0, sets.size() - 1)(rng)];
      const std::size_t ei = std::uniform_int_distribution<std::size_t>(0, set.episodes.size() - 1)(rng);
      const auto& ep = set.episodes[ei];
      const std::size_t t = std::uniform_int_distribution<std::size_t>(0, ep.length() - 1)(rng);
      const DropDecision drop = draw_dropout(cfg, rng);
      const bool use_mem = pc.use_memory && !drop.memory;
      const bool use_phys = pc.use_physics && !drop.physics;
      Sample s = build_sample(ep, t, policy, use_mem, use_phys);
      rep.samples++;
      rep.memory_drops += drop.memory;
      rep.physics_drops += drop.physics;
      Conditioning c;
      c.embodiment = s.embodiment;
      c.agnostic = agnostic[b];
      c.h = policy.cognition(s.patches, s.task);
      if (use_mem) {
        std::vector<Tensor> entries;
        {
          NoGradGuard ng;
          for (const auto& mp : s.memory_patches) entries.push_back(policy.cognition(mp, s.task));
        }
        c.m = policy.memory_feature(entries, c.h);
      } else {
        c.m = Tensor::zeros({pc.enc.n_q, pc.enc.d});
      }
      c.state = drop.state ? Tensor::zeros(s.state.shape()) : s.state;
      c.p_now = s.p_now;
      if (!set.advantage.empty() && u01(rng) >= cfg.advantage_dropout) c.advantage = set.advantage[ei][t];
      conds.push_back(c);
      targets.push_back(s.target);
    }
    for (const auto& c : conds) fns.push_back(policy.field_fn(c));
    policy.params().zero_grad();
    Tensor loss = flow::fm_loss(fns, targets, cfg.lambda_p, {}, rng);
    if (!std::isfinite(loss.item())) throw NumericError("training loss became non-finite at step " + std::to_string(step));
    backward(loss);
    const double lr = lr_at(step, cfg.steps, cfg.lr, cfg.warmup_frac, schedule);
    opt.step(policy.params(), lr, [&](const std::string& name) { return trainable(step, name); });
    if (policy.params().contains("phys.gate")) {
      auto g = policy.params().get("phys.gate").mutable_data();
      g[0] = std::max(g[0], pc.msat.physics_gate_init);
    }
    rep.losses.push_back(loss.item());
    if (log) *log << nlohmann::json{{"step", step}, {"loss", loss.item()}, {"lr", lr}}.dump() << "\n";
  }
  return rep;
}

/// Vision + action flow matching only; the expansion modules stay disabled and untouched.
inline TrainReport pretrain(Policy& policy, const StageConfig& cfg, const std::vector<TrainSet>& sets,
                            std::ostream* log = nullptr) {
  check_sets(sets);
  policy.config().enc.motion = false;
  policy.config().use_memory = false;
  policy.config().use_physics = false;
  ensure_stats(policy, sets);
  const bool labelled = std::any_of(sets.begin(), sets.end(), [](const TrainSet& s) { return !s.advantage.empty(); });
  auto trainable = [&](std::size_t, const std::string& name) {
    if (is_expansion_param(name) || has_prefix(name, cfg.frozen)) return false;
    return labelled || name != "msat.adv";
  };
  return run_training(policy, cfg, sets, trainable, LrSchedule::kConstant, log);
}

/// Zero/near-zero output init for modules being switched on.
inline void reset_expansion_outputs(Policy& policy) {
  auto& ps = policy.params();
  const auto& pc = policy.config();
  auto zero = [&](const std::string& n) { ps.set_values(n, std::vector<double>(ps[n].numel(), 0.0)); };
  if (!pc.enc.motion) {
    zero("enc.stss.w2");
    zero("enc.stss.b2");
  }
  if (!pc.use_memory) zero("mem.out");
  if (!pc.use_physics) {
    ps.set_values("phys.gate", {pc.msat.physics_gate_init});
    for (auto& [name, t] : ps) {
      if (name.find(".pout.") != std::string::npos) zero(name);
    }
  }
}

/// Enables motion, memory and physics with an alignment warmup that only trains new parameters.
inline TrainReport midtrain(Policy& policy, const StageConfig& cfg, const std::vector<TrainSet>& sets,
                            std::ostream* log = nullptr) {
  check_sets(sets);
  if (policy.stats().empty()) throw ContractError("midtrain needs a pretrained checkpoint");
  std::set<std::size_t> pretrained;
  for (const auto& [id, st] : policy.stats()) pretrained.insert(id);
  reset_expansion_outputs(policy);
  policy.config().enc.motion = true;
  policy.config().use_memory = true;
  policy.config().use_physics = true;
  ensure_stats(policy, sets);
  std::vector<std::string> new_heads;
  for (std::size_t id = 0; id < policy.config().registry.size(); ++id) {
    if (!pretrained.count(id)) new_heads.push_back(msat::Registry::head_prefix(policy.config().registry.at(id)));
  }
  auto trainable = [&](std::size_t step, const std::string& name) {
    if (has_prefix(name, cfg.frozen)) return false;
    if (step < cfg.alignment_warmup) return is_expansion_param(name) || has_prefix(name, new_heads);
    return true;
  };
  return run_training(policy, cfg, sets, trainable, LrSchedule::kConstant, log);
}

/// Task training with state dropout and the lower encoder layers frozen.
inline TrainReport finetune(Policy& policy, const StageConfig& cfg, const std::vector<TrainSet>& sets,
                            std::ostream* log = nullptr) {
  check_sets(sets);
  if (policy.stats().empty()) throw ContractError("finetune needs a trained checkpoint");
  ensure_stats(policy, sets);
  const std::size_t n_layers = policy.config().enc.n_layers;
  auto trainable = [&](std::size_t, const std::string& name) {
    return !has_prefix(name, cfg.frozen) && !is_frozen_encoder_param(name, n_layers, cfg.trainable_top_layers);
  };
  return run_training(policy, cfg, sets, trainable, LrSchedule::kCosine, log);
}

}  // namespace rldx::trainer
