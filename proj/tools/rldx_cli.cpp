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

// rldx: batch command-line front end.
//
// Exit status: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rldx/cli/run_config.hpp"
#include "rldx/envs/episode.hpp"
#include "rldx/graphopt/graphopt.hpp"
#include "rldx/graphopt/policy_graph.hpp"
#include "rldx/rl/bon.hpp"
#include "rldx/rl/recap.hpp"
#include "rldx/trainer/checkpoint.hpp"
#include "rldx/trainer/evaluate.hpp"
#include "rldx/trainer/gradcheck.hpp"
#include "rldx/trainer/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rldx;

namespace {

// Values given on the command line; unset ones leave the config untouched.
struct Flags {
  std::string config;
  std::string env, out, stage, ckpt, init, log;
  std::vector<std::string> data;
  std::optional<std::size_t> episodes, steps, exec_horizon, iterations, rollouts, stride, repeats, warmup;
  std::optional<std::uint64_t> seed;
  std::optional<double> dither, temperature, eps;
  std::optional<int> advantage;
  std::vector<int> speeds;
  std::vector<std::size_t> bon_n;
  bool no_memory = false, no_physics = false, physics_graph = false;
};

cli::RunConfig resolve(const Flags& f) {
  cli::RunConfig c = f.config.empty() ? cli::RunConfig{} : cli::load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.episodes) c.data.episodes = c.eval.episodes = *f.episodes;
  if (f.dither) c.data.dither = *f.dither;
  if (f.steps) c.train.steps = *f.steps;
  if (f.exec_horizon) c.eval.exec_horizon = *f.exec_horizon;
  if (f.temperature) c.eval.temperature = c.rl.bon_temperature = *f.temperature;
  if (f.advantage) c.eval.advantage = *f.advantage;
  if (f.iterations) c.rl.iterations = *f.iterations;
  if (f.rollouts) c.rl.n_rollouts = *f.rollouts;
  if (f.stride) c.gradcheck.stride = *f.stride;
  if (f.eps) c.gradcheck.eps = *f.eps;
  if (f.repeats) c.graph.repeats = *f.repeats;
  if (f.warmup) c.graph.warmup = *f.warmup;
  if (!f.speeds.empty()) c.env.conveyor_speeds = f.speeds;
  if (!f.bon_n.empty()) c.rl.bon_n = f.bon_n;
  if (f.no_memory) c.eval.use_memory = false;
  if (f.no_physics) c.eval.use_physics = false;
  if (f.physics_graph) c.graph.physics = true;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

envs::EnvKind env_kind(const std::string& name) {
  try {
    return envs::kind_from_name(name);
  } catch (const Error& ex) {
    throw ConfigError(ex.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  envs::io::write_file(path, j.dump(2) + "\n");
}

void emit(const std::string& out, const json& j) {
  if (!out.empty()) write_json(out, j);
  std::cout << j.dump(2) << "\n";
}

std::vector<trainer::TrainSet> load_sets(const std::vector<std::string>& dirs) {
  std::vector<trainer::TrainSet> sets;
  for (const auto& d : dirs) sets.push_back({envs::load_dataset(d), {}});
  return sets;
}

std::vector<envs::EpisodeRecord> load_all(const std::vector<std::string>& dirs) {
  std::vector<envs::EpisodeRecord> out;
  for (const auto& d : dirs) {
    auto eps = envs::load_dataset(d);
    out.insert(out.end(), eps.begin(), eps.end());
  }
  return out;
}

trainer::EvalOptions eval_options(const cli::RunConfig& c) {
  trainer::EvalOptions o;
  o.episodes = c.eval.episodes;
  o.seed = c.eval.seed;
  o.exec_horizon = c.eval.exec_horizon;
  o.env = c.env;
  return o;
}

trainer::PolicyRunOptions run_options(const cli::RunConfig& c) {
  trainer::PolicyRunOptions r;
  r.T = c.eval.T;
  r.temperature = c.eval.temperature;
  r.use_memory = c.eval.use_memory;
  r.use_physics = c.eval.use_physics;
  r.advantage = c.eval.advantage;
  return r;
}

json metrics_json(const trainer::EvalResult& r) {
  return {{"success_rate", r.success_rate},
          {"mean_len", r.mean_length},
          {"mean_success_len", r.mean_success_length},
          {"successes", r.successes},
          {"n", r.episodes}};
}

// ------------------------------------------------------------------ commands

int cmd_gen_data(const Flags& f) {
  const auto c = resolve(f);
  const auto kind = env_kind(f.env);
  auto m = envs::gen_dataset(kind, c.data.episodes, c.seed, f.out, c.env, c.data.dither);
  std::cout << envs::to_json(m).dump(2) << "\n";
  return 0;
}

int cmd_train(const Flags& f) {
  auto c = resolve(f);
  const auto stage = [&] {
    try {
      return trainer::stage_from_name(f.stage);
    } catch (const Error& ex) {
      throw ConfigError(ex.what());
    }
  }();
  c.train.stage = stage;
  if (stage != trainer::Stage::kPretrain && f.init.empty()) {
    throw ConfigError("--init checkpoint is required for " + f.stage);
  }
  auto sets = load_sets(f.data);
  Policy policy = f.init.empty() ? Policy(c.model, c.seed) : ckpt::load(f.init);
  std::ofstream log_file;
  if (!f.log.empty()) {
    log_file.open(f.log, std::ios::trunc);
    if (!log_file) throw Error("cannot open log file " + f.log);
  }
  std::ostream* log = f.log.empty() ? nullptr : &log_file;
  trainer::TrainReport rep;
  switch (stage) {
    case trainer::Stage::kPretrain: rep = trainer::pretrain(policy, c.train, sets, log); break;
    case trainer::Stage::kMidtrain: rep = trainer::midtrain(policy, c.train, sets, log); break;
    case trainer::Stage::kFinetune: rep = trainer::finetune(policy, c.train, sets, log); break;
  }
  ckpt::save(f.out, policy);
  const std::size_t tail = std::max<std::size_t>(1, rep.losses.size() / 10);
  double mean_tail = 0;
  for (std::size_t i = rep.losses.size() - tail; i < rep.losses.size(); ++i) mean_tail += rep.losses[i];
  emit("", {{"stage", f.stage},
            {"steps", rep.losses.size()},
            {"final_loss", mean_tail / double(tail)},
            {"samples", rep.samples},
            {"memory_drops", rep.memory_drops},
            {"physics_drops", rep.physics_drops},
            {"checkpoint", f.out}});
  return 0;
}

int cmd_eval(const Flags& f) {
  const auto c = resolve(f);
  const auto kind = env_kind(f.env);
  Policy policy = ckpt::load(f.ckpt);
  auto r = trainer::evaluate_policy(kind, policy, eval_options(c), run_options(c));
  json j = metrics_json(r);
  j["env"] = f.env;
  j["exec_horizon"] = c.eval.exec_horizon;
  emit(f.out, j);
  return 0;
}

int cmd_recap(const Flags& f) {
  const auto c = resolve(f);
  const auto kind = env_kind(f.env);
  if (f.out.empty()) throw ConfigError("--out is required");
  rl::RecapState st{ckpt::load(f.ckpt), {}, load_all(f.data), {}, false, 0, {}};
  const auto rc = cli::recap_config(c);
  auto eval_now = [&] {
    auto run = run_options(c);
    if (st.conditioned) run.advantage = 1;
    return trainer::evaluate_policy(kind, st.policy, eval_options(c), run);
  };
  json iters = json::array();
  json base = metrics_json(eval_now());
  base["iteration"] = 0;
  iters.push_back(base);
  for (std::size_t k = 1; k <= c.rl.iterations; ++k) {
    auto rep = rl::recap_iterate(st, kind, rc);
    const fs::path dir = fs::path(f.out) / ("iter_" + std::to_string(k));
    ckpt::save(dir, st.policy);
    write_json(dir / "labels.json", rl::labels_to_json(st.labels));
    json m = metrics_json(eval_now());
    m["iteration"] = k;
    m["rollouts"] = rep.rollouts;
    m["rollout_successes"] = rep.rollout_successes;
    m["dataset_episodes"] = st.dataset.size();
    m["critic_final_loss"] = rep.critic_losses.empty() ? 0.0 : rep.critic_losses.back();
    m["policy_final_loss"] = rep.policy_losses.empty() ? 0.0 : rep.policy_losses.back();
    iters.push_back(m);
  }
  emit((fs::path(f.out) / "metrics.json").string(), {{"env", f.env}, {"iterations", iters}});
  return 0;
}

int cmd_bon_eval(const Flags& f) {
  const auto c = resolve(f);
  const auto kind = env_kind(f.env);
  Policy policy = ckpt::load(f.ckpt);
  const auto episodes = load_all(f.data);
  if (episodes.empty()) throw ConfigError("--data must name at least one dataset");
  auto ccfg = rl::chunk_critic_config(policy, envs::spec_of(kind).embodiment_id);
  rl::ChunkCritic critic(ccfg, c.seed);
  auto losses = critic.train(rl::chunk_transitions(policy, episodes, ccfg), c.rl.chunk_critic_steps,
                             c.rl.chunk_critic_batch, c.seed + 1);
  auto run = run_options(c);
  run.temperature = c.rl.bon_temperature;
  json rows = json::array();
  for (std::size_t n : c.rl.bon_n) {
    rl::BestOfNController ctrl(policy, critic, run, n);
    auto r = trainer::evaluate(kind, ctrl, eval_options(c), policy.config().msat.chunk());
    json m = metrics_json(r);
    m["N"] = n;
    rows.push_back(m);
  }
  emit(f.out, {{"env", f.env},
               {"temperature", c.rl.bon_temperature},
               {"critic_final_v_loss", losses.back().first},
               {"critic_final_q_loss", losses.back().second},
               {"results", rows}});
  return 0;
}

int cmd_graph_bench(const Flags& f) {
  const auto c = resolve(f);
  Policy policy = f.ckpt.empty() ? Policy(c.model, c.seed) : ckpt::load(f.ckpt);
  if (c.graph.physics && !policy.config().use_physics) {
    throw ConfigError("graph.physics needs a model with the physics stream enabled");
  }
  graphopt::PolicyGraphSpec spec;
  spec.embodiment = c.graph.embodiment;
  spec.task = c.graph.task;
  spec.steps = c.graph.steps;
  spec.memory_entries = policy.config().use_memory ? c.graph.memory_entries : 0;
  spec.physics = c.graph.physics;
  auto cap = graphopt::capture_policy(policy, spec, c.seed);
  auto v = graphopt::optimize(cap.graph);
  std::mt19937_64 rng(c.seed);
  const auto inputs = graphopt::random_inputs(v.eager, rng);
  std::vector<std::pair<std::string, graphopt::CostReport>> rows;
  for (auto* g : {&v.eager, &v.folded, &v.fused}) {
    auto rep = graphopt::cost_model(*g);
    rep.median_ms = graphopt::time_execution(*g, inputs, c.graph.elem_bytes, c.graph.warmup, c.graph.repeats).median_ms;
    rows.emplace_back(g == &v.eager ? "eager" : g == &v.folded ? "folded" : "fused", rep);
  }
  const auto& e = rows[0].second;
  const auto& u = rows[2].second;
  json report{
      {"eager", graphopt::to_json(rows[0].second)},
      {"folded", graphopt::to_json(rows[1].second)},
      {"fused", graphopt::to_json(rows[2].second)},
      {"fusions", v.stats.fired},
      {"elem_bytes", c.graph.elem_bytes},
      {"equivalence",
       {{"folded_vs_eager", graphopt::verify_equivalence(v.eager, v.folded, c.graph.trials, c.graph.elem_bytes, c.seed)},
        {"fused_vs_eager", graphopt::verify_equivalence(v.eager, v.fused, c.graph.trials, c.graph.elem_bytes, c.seed)}}},
      {"reduction",
       {{"launches", 1.0 - double(u.launches) / double(e.launches)},
        {"bytes", 1.0 - double(u.bytes()) / double(e.bytes())},
        {"median_ms", 1.0 - *u.median_ms / *e.median_ms}}}};
  std::cerr << graphopt::to_table(rows);
  if (!f.out.empty()) {
    const fs::path dir(f.out);
    graphopt::save_graph(dir / "eager", v.eager);
    graphopt::save_graph(dir / "folded", v.folded);
    graphopt::save_graph(dir / "fused", v.fused);
    write_json(dir / "report.json", report);
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_grad_check(const Flags& f) {
  const auto c = resolve(f);
  auto r = trainer::full_loss_gradcheck(trainer::tiny_policy_config(), c.gradcheck.seed, c.gradcheck.eps,
                                        c.gradcheck.stride);
  emit(f.out, {{"max_rel_error", r.result.max_rel_error},
               {"worst_param", r.result.worst_param},
               {"worst_index", r.result.worst_index},
               {"coords_checked", r.result.coords_checked},
               {"n_params", r.n_params},
               {"loss", r.loss},
               {"eps", c.gradcheck.eps}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rldx: data generation, training, evaluation and graph benchmarking"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* s) {
    s->add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
    s->add_option("--seed", f.seed, "base seed");
  };
  auto* gen = app.add_subcommand("gen-data", "write expert episodes and a manifest");
  common(gen);
  gen->add_option("--env", f.env, "conveyor | shell | probe")->required();
  gen->add_option("--episodes", f.episodes, "episode count");
  gen->add_option("--dither", f.dither, "probability of a random detour per step");
  gen->add_option("--speeds", f.speeds, "conveyor speeds")->delimiter(',');
  gen->add_option("--out", f.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "run one training stage and save a checkpoint");
  common(train);
  train->add_option("--stage", f.stage, "pretrain | midtrain | finetune")->required();
  train->add_option("--data", f.data, "dataset directories")->required();
  train->add_option("--init", f.init, "checkpoint to start from");
  train->add_option("--steps", f.steps, "optimizer steps");
  train->add_option("--log", f.log, "JSON-lines loss log");
  train->add_option("--out", f.out, "checkpoint directory")->required();

  auto add_eval_flags = [&](CLI::App* s) {
    s->add_option("--ckpt", f.ckpt, "checkpoint directory")->required();
    s->add_option("--env", f.env, "conveyor | shell | probe")->required();
    s->add_option("--episodes", f.episodes, "evaluation episodes");
    s->add_option("--exec-horizon", f.exec_horizon, "actions executed per chunk");
    s->add_option("--speeds", f.speeds, "conveyor speeds")->delimiter(',');
    s->add_option("--temperature", f.temperature, "initial-noise temperature");
    s->add_flag("--no-memory", f.no_memory, "disable the memory module");
    s->add_flag("--no-physics", f.no_physics, "mask the physics stream");
  };
  auto* eval = app.add_subcommand("eval", "closed-loop evaluation, JSON metrics");
  common(eval);
  add_eval_flags(eval);
  eval->add_option("--advantage", f.advantage, "advantage indicator (0 or 1)");
  eval->add_option("--out", f.out, "metrics file");

  auto* recap = app.add_subcommand("recap", "iterated advantage-conditioned refinement");
  common(recap);
  add_eval_flags(recap);
  recap->add_option("--data", f.data, "initial dataset directories")->required();
  recap->add_option("--iterations", f.iterations, "iterations");
  recap->add_option("--rollouts", f.rollouts, "rollouts per iteration");
  recap->add_option("--out", f.out, "output directory")->required();

  auto* bon = app.add_subcommand("bon-eval", "best-of-N evaluation against a trained chunk critic");
  common(bon);
  add_eval_flags(bon);
  bon->add_option("--data", f.data, "datasets for the chunk critic")->required();
  bon->add_option("--n", f.bon_n, "candidate counts")->delimiter(',');
  bon->add_option("--out", f.out, "metrics file");

  auto* gb = app.add_subcommand("graph-bench", "capture, optimize and benchmark the policy graph");
  common(gb);
  gb->add_option("--ckpt", f.ckpt, "checkpoint (default: freshly initialized model)");
  gb->add_flag("--physics", f.physics_graph, "include the physics stream");
  gb->add_option("--repeats", f.repeats, "timed executions per graph");
  gb->add_option("--warmup", f.warmup, "untimed executions per graph");
  gb->add_option("--out", f.out, "output directory");

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the full training loss");
  common(gc);
  gc->add_option("--stride", f.stride, "probe every n-th coordinate");
  gc->add_option("--eps", f.eps, "finite-difference step");
  gc->add_option("--out", f.out, "result file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (gen->parsed()) return cmd_gen_data(f);
    if (train->parsed()) return cmd_train(f);
    if (eval->parsed()) return cmd_eval(f);
    if (recap->parsed()) return cmd_recap(f);
    if (bon->parsed()) return cmd_bon_eval(f);
    if (gb->parsed()) return cmd_graph_bench(f);
    if (gc->parsed()) return cmd_grad_check(f);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
