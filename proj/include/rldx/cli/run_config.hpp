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

// Run configuration for the command-line tool. Every field has a default; a
// JSON file overrides defaults and command-line flags override the file.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "rldx/envs/envs.hpp"
#include "rldx/rl/recap.hpp"
#include "rldx/trainer/checkpoint.hpp"
#include "rldx/trainer/trainer.hpp"

namespace rldx::cli {

using nlohmann::json;

struct DataSettings {
  std::size_t episodes = 300;
  double dither = 0.0;
};

struct EvalSettings {
  std::size_t episodes = 200;
  std::uint64_t seed = 100000;
  std::size_t exec_horizon = 1;
  std::size_t T = 4;
  double temperature = 1.0;
  bool use_memory = true;
  bool use_physics = true;
  std::optional<int> advantage;
};

struct RlSettings {
  std::size_t iterations = 1;
  std::size_t n_rollouts = 100;
  std::uint64_t rollout_seed = 1'000'000;
  std::size_t critic_steps = 1500;
  std::size_t critic_batch = 64;
  double critic_lr = 1e-3;
  std::size_t policy_steps = 1000;
  double policy_lr = 1e-3;
  std::vector<std::size_t> bon_n{1, 4, 8};
  double bon_temperature = 1.0;
  std::size_t chunk_critic_steps = 2000;
  std::size_t chunk_critic_batch = 64;
};

struct GraphSettings {
  std::size_t embodiment = 0;
  std::size_t task = 0;
  std::size_t steps = 4;
  std::size_t memory_entries = 2;
  bool physics = false;
  std::size_t elem_bytes = 4;
  std::size_t trials = 3;
  std::size_t warmup = 100;
  std::size_t repeats = 300;
};

struct GradCheckSettings {
  double eps = 1e-5;
  std::size_t stride = 1;
  std::uint64_t seed = 3;
};

struct RunConfig {
  std::uint64_t seed = 0;
  envs::EnvOptions env;
  DataSettings data;
  PolicyConfig model;
  trainer::StageConfig train;
  EvalSettings eval;
  RlSettings rl;
  GraphSettings graph;
  GradCheckSettings gradcheck;

  void validate() const {
    if (env.conveyor_speeds.empty()) throw ConfigError("env.conveyor_speeds must not be empty");
    for (int v : env.conveyor_speeds) {
      if (v < 0 || v > 3) throw ConfigError("env.conveyor_speeds entries must lie in [0,3]");
    }
    if (!(data.dither >= 0 && data.dither <= 1)) throw ConfigError("data.dither must lie in [0,1]");
    model.validate();
    train.validate();
    if (eval.exec_horizon < 1 || eval.exec_horizon > model.msat.chunk()) {
      throw ConfigError("eval.exec_horizon must lie in [1, H+1]");
    }
    if (eval.T < 1) throw ConfigError("eval.T must be >= 1");
    if (!(eval.temperature > 0)) throw ConfigError("eval.temperature must be positive");
    if (eval.advantage && *eval.advantage != 0 && *eval.advantage != 1) throw ConfigError("eval.advantage must be 0 or 1");
    if (rl.bon_n.empty()) throw ConfigError("rl.bon_n must not be empty");
    for (auto n : rl.bon_n) {
      if (n < 1) throw ConfigError("rl.bon_n entries must be >= 1");
    }
    if (!(rl.bon_temperature > 0)) throw ConfigError("rl.bon_temperature must be positive");
    if (rl.critic_steps < 1 || rl.critic_batch < 1 || rl.policy_steps < 1 || rl.chunk_critic_steps < 1 ||
        rl.chunk_critic_batch < 1) {
      throw ConfigError("rl step and batch counts must be >= 1");
    }
    if (!(rl.critic_lr > 0) || !(rl.policy_lr > 0)) throw ConfigError("rl learning rates must be positive");
    if (graph.elem_bytes != 4 && graph.elem_bytes != 8) throw ConfigError("graph.elem_bytes must be 4 or 8");
    if (graph.steps < 1 || graph.repeats < 1) throw ConfigError("graph.steps and graph.repeats must be >= 1");
    if (graph.embodiment >= model.registry.size()) throw ConfigError("graph.embodiment is not registered");
    if (graph.memory_entries > model.mem.capacity) throw ConfigError("graph.memory_entries exceeds memory capacity");
    if (graph.physics && model.registry.at(graph.embodiment).physics_dim == 0) {
      throw ConfigError("graph.physics needs an embodiment with a physics channel");
    }
    if (!(gradcheck.eps > 0)) throw ConfigError("gradcheck.eps must be positive");
    if (gradcheck.stride < 1) throw ConfigError("gradcheck.stride must be >= 1");
  }
};

namespace detail {

using ckpt::read_field;
using ckpt::reject_unknown;

inline const json& object_at(const json& j, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  return j;
}

inline void read_env(const json& j, envs::EnvOptions& o) {
  std::set<std::string> s;
  read_field(object_at(j, "env"), "conveyor_speeds", o.conveyor_speeds, s);
  reject_unknown(j, s, "env");
}

inline void read_data(const json& j, DataSettings& o) {
  std::set<std::string> s;
  read_field(object_at(j, "data"), "episodes", o.episodes, s);
  read_field(j, "dither", o.dither, s);
  reject_unknown(j, s, "data");
}

inline void read_train(const json& j, trainer::StageConfig& o) {
  std::set<std::string> s;
  read_field(object_at(j, "train"), "steps", o.steps, s);
  read_field(j, "batch", o.batch, s);
  read_field(j, "lr", o.lr, s);
  read_field(j, "warmup_frac", o.warmup_frac, s);
  read_field(j, "modality_dropout", o.modality_dropout, s);
  read_field(j, "state_dropout", o.state_dropout, s);
  read_field(j, "agnostic_fraction", o.agnostic_fraction, s);
  read_field(j, "alignment_warmup", o.alignment_warmup, s);
  read_field(j, "trainable_top_layers", o.trainable_top_layers, s);
  read_field(j, "frozen", o.frozen, s);
  read_field(j, "advantage_dropout", o.advantage_dropout, s);
  read_field(j, "lambda_p", o.lambda_p, s);
  read_field(j, "weight_decay", o.weight_decay, s);
  read_field(j, "grad_clip", o.grad_clip, s);
  reject_unknown(j, s, "train");
}

inline void read_eval(const json& j, EvalSettings& o) {
  std::set<std::string> s;
  read_field(object_at(j, "eval"), "episodes", o.episodes, s);
  read_field(j, "seed", o.seed, s);
  read_field(j, "exec_horizon", o.exec_horizon, s);
  read_field(j, "T", o.T, s);
  read_field(j, "temperature", o.temperature, s);
  read_field(j, "use_memory", o.use_memory, s);
  read_field(j, "use_physics", o.use_physics, s);
  s.insert("advantage");
  if (j.contains("advantage") && !j.at("advantage").is_null()) o.advantage = j.at("advantage").get<int>();
  reject_unknown(j, s, "eval");
}

inline void read_rl(const json& j, RlSettings& o) {
  std::set<std::string> s;
  read_field(object_at(j, "rl"), "iterations", o.iterations, s);
  read_field(j, "n_rollouts", o.n_rollouts, s);
  read_field(j, "rollout_seed", o.rollout_seed, s);
  read_field(j, "critic_steps", o.critic_steps, s);
  read_field(j, "critic_batch", o.critic_batch, s);
  read_field(j, "critic_lr", o.critic_lr, s);
  read_field(j, "policy_steps", o.policy_steps, s);
  read_field(j, "policy_lr", o.policy_lr, s);
  read_field(j, "bon_n", o.bon_n, s);
  read_field(j, "bon_temperature", o.bon_temperature, s);
  read_field(j, "chunk_critic_steps", o.chunk_critic_steps, s);
  read_field(j, "chunk_critic_batch", o.chunk_critic_batch, s);
  reject_unknown(j, s, "rl");
}

inline void read_graph(const json& j, GraphSettings& o) {
  std::set<std::string> s;
  read_field(object_at(j, "graph"), "embodiment", o.embodiment, s);
  read_field(j, "task", o.task, s);
  read_field(j, "steps", o.steps, s);
  read_field(j, "memory_entries", o.memory_entries, s);
  read_field(j, "physics", o.physics, s);
  read_field(j, "elem_bytes", o.elem_bytes, s);
  read_field(j, "trials", o.trials, s);
  read_field(j, "warmup", o.warmup, s);
  read_field(j, "repeats", o.repeats, s);
  reject_unknown(j, s, "graph");
}

inline void read_gradcheck(const json& j, GradCheckSettings& o) {
  std::set<std::string> s;
  read_field(object_at(j, "gradcheck"), "eps", o.eps, s);
  read_field(j, "stride", o.stride, s);
  read_field(j, "seed", o.seed, s);
  reject_unknown(j, s, "gradcheck");
}

}  // namespace detail

/// Applies a JSON document over `base`. Unknown keys and type mismatches raise ConfigError.
inline RunConfig run_config_from_json(const json& j, RunConfig c = {}) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  try {
    std::set<std::string> s{"env", "data", "model", "train", "eval", "rl", "graph", "gradcheck"};
    ckpt::read_field(j, "seed", c.seed, s);
    if (j.contains("env")) detail::read_env(j.at("env"), c.env);
    if (j.contains("data")) detail::read_data(j.at("data"), c.data);
    if (j.contains("model")) c.model = ckpt::policy_config_from_json(detail::object_at(j.at("model"), "model"), c.model);
    if (j.contains("train")) detail::read_train(j.at("train"), c.train);
    if (j.contains("eval")) detail::read_eval(j.at("eval"), c.eval);
    if (j.contains("rl")) detail::read_rl(j.at("rl"), c.rl);
    if (j.contains("graph")) detail::read_graph(j.at("graph"), c.graph);
    if (j.contains("gradcheck")) detail::read_gradcheck(j.at("gradcheck"), c.gradcheck);
    ckpt::reject_unknown(j, s, "run config");
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("run config has a wrongly typed value: ") + ex.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(envs::io::read_file(path));
  } catch (const json::exception& ex) {
    throw ConfigError("run config " + path.string() + " is not valid JSON: " + ex.what());
  } catch (const Error& ex) {
    throw ConfigError(ex.what());
  }
  return run_config_from_json(j);
}

inline json to_json(const RunConfig& c) {
  const auto& t = c.train;
  return {{"seed", c.seed},
          {"env", {{"conveyor_speeds", c.env.conveyor_speeds}}},
          {"data", {{"episodes", c.data.episodes}, {"dither", c.data.dither}}},
          {"model", ckpt::to_json(c.model)},
          {"train",
           {{"steps", t.steps}, {"batch", t.batch}, {"lr", t.lr}, {"warmup_frac", t.warmup_frac},
            {"modality_dropout", t.modality_dropout}, {"state_dropout", t.state_dropout},
            {"agnostic_fraction", t.agnostic_fraction}, {"alignment_warmup", t.alignment_warmup},
            {"trainable_top_layers", t.trainable_top_layers}, {"frozen", t.frozen},
            {"advantage_dropout", t.advantage_dropout}, {"lambda_p", t.lambda_p}, {"weight_decay", t.weight_decay},
            {"grad_clip", t.grad_clip}}},
          {"eval",
           {{"episodes", c.eval.episodes}, {"seed", c.eval.seed}, {"exec_horizon", c.eval.exec_horizon},
            {"T", c.eval.T}, {"temperature", c.eval.temperature}, {"use_memory", c.eval.use_memory},
            {"use_physics", c.eval.use_physics},
            {"advantage", c.eval.advantage ? json(*c.eval.advantage) : json(nullptr)}}},
          {"rl",
           {{"iterations", c.rl.iterations}, {"n_rollouts", c.rl.n_rollouts}, {"rollout_seed", c.rl.rollout_seed},
            {"critic_steps", c.rl.critic_steps}, {"critic_batch", c.rl.critic_batch}, {"critic_lr", c.rl.critic_lr},
            {"policy_steps", c.rl.policy_steps}, {"policy_lr", c.rl.policy_lr}, {"bon_n", c.rl.bon_n},
            {"bon_temperature", c.rl.bon_temperature}, {"chunk_critic_steps", c.rl.chunk_critic_steps},
            {"chunk_critic_batch", c.rl.chunk_critic_batch}}},
          {"graph",
           {{"embodiment", c.graph.embodiment}, {"task", c.graph.task}, {"steps", c.graph.steps},
            {"memory_entries", c.graph.memory_entries}, {"physics", c.graph.physics},
            {"elem_bytes", c.graph.elem_bytes}, {"trials", c.graph.trials}, {"warmup", c.graph.warmup},
            {"repeats", c.graph.repeats}}},
          {"gradcheck", {{"eps", c.gradcheck.eps}, {"stride", c.gradcheck.stride}, {"seed", c.gradcheck.seed}}}};
}

/// Recap settings derived from the run config.
inline rl::RecapConfig recap_config(const RunConfig& c) {
  rl::RecapConfig r;
  r.n_rollouts = c.rl.n_rollouts;
  r.rollout_seed = c.rl.rollout_seed;
  r.exec_horizon = c.eval.exec_horizon;
  r.run.T = c.eval.T;
  r.run.temperature = c.eval.temperature;
  r.run.use_memory = c.eval.use_memory;
  r.run.use_physics = c.eval.use_physics;
  r.env = c.env;
  r.critic.steps = c.rl.critic_steps;
  r.critic.batch = c.rl.critic_batch;
  r.critic.lr = c.rl.critic_lr;
  r.critic.seed = c.seed;
  r.policy_stage = c.train;
  r.policy_stage.stage = trainer::Stage::kFinetune;
  r.policy_stage.steps = c.rl.policy_steps;
  r.policy_stage.lr = c.rl.policy_lr;
  r.policy_stage.seed = c.seed;
  return r;
}

}  // namespace rldx::cli
