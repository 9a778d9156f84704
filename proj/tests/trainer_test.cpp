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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "rldx/trainer/checkpoint.hpp"
#include "rldx/trainer/evaluate.hpp"
#include "rldx/trainer/trainer.hpp"

using namespace rldx;
using namespace rldx::trainer;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("rldx_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainSet expert_set(envs::EnvKind k, std::size_t n, std::uint64_t seed = 0) {
  TrainSet s;
  for (std::size_t i = 0; i < n; ++i) s.episodes.push_back(envs::rollout_expert(k, seed + i));
  return s;
}

StageConfig small_stage(Stage st, std::size_t steps, std::uint64_t seed = 1) {
  StageConfig c;
  c.stage = st;
  c.steps = steps;
  c.batch = 8;
  c.lr = 3e-3;
  c.seed = seed;
  c.alignment_warmup = 5;
  return c;
}

double mean_range(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  double s = 0;
  for (std::size_t i = lo; i < hi; ++i) s += v[i];
  return s / double(hi - lo);
}

bool params_equal(const ParamStore& a, const ParamStore& b, const std::string& prefix = "") {
  return hash_params(a, prefix) == hash_params(b, prefix);
}

const std::vector<TrainSet>& pre_sets() {
  static const std::vector<TrainSet> sets{expert_set(envs::EnvKind::kConveyor, 12),
                                          expert_set(envs::EnvKind::kShell, 12)};
  return sets;
}

}  // namespace

TEST(Data, CanvasAndRepeatFirstPadding) {
  encoder::EncoderConfig cfg;
  auto e = envs::rollout_expert(envs::EnvKind::kShell, 4);
  auto spec = envs::spec_of(envs::EnvKind::kShell);
  auto canvas = to_canvas(e.frame(0), spec, cfg);
  ASSERT_EQ(canvas.size(), cfg.frame_size());
  EXPECT_EQ(canvas[0 * 24 + 3], e.frame(0)[3]);
  EXPECT_EQ(canvas[1 * 24 + 8], e.frame(0)[9 + 8]);
  EXPECT_EQ(canvas[1 * 24 + 9], 0.0f);
  auto src = [&](std::size_t i) { return to_canvas(e.frame(i), spec, cfg); };
  auto w = window_at(src, 3, cfg);  // offsets -6,-4,-2,0 -> 0,0,1,3
  EXPECT_EQ(w.frames[0], src(0));
  EXPECT_EQ(w.frames[1], src(0));
  EXPECT_EQ(w.frames[2], src(1));
  EXPECT_EQ(w.frames[3], src(3));
  encoder::EncoderConfig small;
  small.width = 8;
  EXPECT_THROW(to_canvas(e.frame(0), spec, small), ShapeError);
}

TEST(Data, SampleChunkRepeatsLastActionAndNormalizes) {
  Policy p(PolicyConfig{}, 0);
  TrainSet set = expert_set(envs::EnvKind::kProbe, 5);
  ensure_stats(p, {set});
  const auto& e = set.episodes[0];
  const std::size_t t = e.length() - 2;
  Sample s = build_sample(e, t, p, true, true);
  const auto& st = p.stats_for(2);
  ASSERT_EQ(s.target.action.shape(), (Shape{8, 1}));
  const double last = flow::normalize({double(e.action(e.length() - 1)[0])}, st.action)[0];
  for (std::size_t r = 1; r < 8; ++r) EXPECT_EQ(s.target.action.at(r, 0), last);
  EXPECT_EQ(s.target.physics.shape(), (Shape{8, 1}));
  EXPECT_EQ(s.memory_patches.size(), memory::stamps_before(long(t), 3, 8).size());
  Sample no_p = build_sample(e, t, p, false, false);
  EXPECT_FALSE(no_p.p_now.defined());
  EXPECT_FALSE(no_p.target.physics.defined());
  EXPECT_TRUE(no_p.memory_patches.empty());
}

TEST(Checkpoint, RoundtripBitExact) {
  Policy p(PolicyConfig{}, 5);
  ensure_stats(p, pre_sets());
  auto dir = temp_dir("ckpt");
  ckpt::save(dir, p);
  Policy q = ckpt::load(dir);
  ASSERT_EQ(q.params().size(), p.params().size());
  for (const auto& [name, t] : p.params()) {
    const auto& u = q.params()[name];
    ASSERT_EQ(t.shape(), u.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      ASSERT_EQ(std::memcmp(&t.values()[i], &u.values()[i], sizeof(double)), 0) << name;
    }
  }
  EXPECT_EQ(ckpt::stats_to_json(q.stats()), ckpt::stats_to_json(p.stats()));
  EXPECT_EQ(ckpt::to_json(q.config()), ckpt::to_json(p.config()));
  auto dir2 = temp_dir("ckpt2");
  ckpt::save(dir2, q);
  for (const char* f : {"index.json", "params.bin", "stats.json", "config.json"}) {
    EXPECT_EQ(envs::io::read_file(dir / f), envs::io::read_file(dir2 / f)) << f;
  }
}

TEST(Checkpoint, CorruptionRejected) {
  Policy p(PolicyConfig{}, 5);
  ensure_stats(p, pre_sets());
  auto dir = temp_dir("ckpt_bad");
  ckpt::save(dir, p);
  auto payload = envs::io::read_file(dir / "params.bin");
  envs::io::write_file(dir / "params.bin", payload.substr(0, payload.size() - 8));
  EXPECT_THROW(ckpt::load(dir), FormatError);
  envs::io::write_file(dir / "params.bin", payload);
  auto index = envs::io::read_file(dir / "index.json");
  envs::io::write_file(dir / "index.json", index.substr(0, index.size() / 2));
  EXPECT_THROW(ckpt::load(dir), FormatError);
  envs::io::write_file(dir / "index.json", index);
  envs::io::write_file(dir / "stats.json", "{\"0\": 3}");
  EXPECT_THROW(ckpt::load(dir), FormatError);
  EXPECT_THROW(ckpt::load(dir / "missing"), Error);
  EXPECT_THROW(ckpt::policy_config_from_json({{"use_memry", true}}), ConfigError);
}

TEST(Pretrain, LossDecreases) {
  Policy p(PolicyConfig{}, 3);
  auto cfg = small_stage(Stage::kPretrain, 120);
  auto rep = pretrain(p, cfg, pre_sets());
  ASSERT_EQ(rep.losses.size(), 120u);
  EXPECT_LT(mean_range(rep.losses, 108, 120), mean_range(rep.losses, 0, 12));
}

TEST(Pretrain, ExpansionModulesUntouchedAndAgnosticZeroFraction) {
  Policy p(PolicyConfig{}, 3);
  ParamStore before = p.params().clone();
  auto cfg = small_stage(Stage::kPretrain, 10);
  cfg.agnostic_fraction = 0.0;
  pretrain(p, cfg, pre_sets());
  EXPECT_TRUE(params_equal(before, p.params(), "head.agnostic."));
  for (const char* pre : {"enc.stss.", "mem.", "phys.", "head.probe."}) {
    EXPECT_TRUE(params_equal(before, p.params(), pre)) << pre;
  }
  EXPECT_FALSE(params_equal(before, p.params(), "msat.b0."));
  for (const auto& [name, t] : p.params()) {
    if (name.rfind("head.agnostic.", 0) == 0 && t.has_grad()) {
      for (double g : t.grad()) ASSERT_EQ(g, 0.0) << name;
    }
  }
  Policy q(PolicyConfig{}, 3);
  cfg.agnostic_fraction = 0.25;
  pretrain(q, cfg, pre_sets());
  EXPECT_FALSE(params_equal(before, q.params(), "head.agnostic."));
}

TEST(Pretrain, DeterministicCheckpointAndLog) {
  auto run = [](const fs::path& dir, std::string& log) {
    Policy p(PolicyConfig{}, 9);
    std::ostringstream os;
    pretrain(p, small_stage(Stage::kPretrain, 6, 4), pre_sets(), &os);
    ckpt::save(dir, p);
    log = os.str();
  };
  auto d1 = temp_dir("det1"), d2 = temp_dir("det2");
  std::string l1, l2;
  run(d1, l1);
  run(d2, l2);
  EXPECT_EQ(envs::io::read_file(d1 / "params.bin"), envs::io::read_file(d2 / "params.bin"));
  EXPECT_EQ(l1, l2);
  std::istringstream is(l1);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<std::size_t>(), n);
    EXPECT_TRUE(j.contains("loss") && j.contains("lr"));
    ++n;
  }
  EXPECT_EQ(n, 6u);
}

TEST(Pretrain, Errors) {
  Policy p(PolicyConfig{}, 1);
  EXPECT_THROW(pretrain(p, small_stage(Stage::kPretrain, 2), {}), ContractError);
  EXPECT_THROW(pretrain(p, small_stage(Stage::kPretrain, 2), {TrainSet{}}), ContractError);
  auto bad = small_stage(Stage::kPretrain, 2);
  bad.modality_dropout = 1.5;
  EXPECT_THROW(pretrain(p, bad, pre_sets()), ConfigError);
  Policy fresh(PolicyConfig{}, 1);
  EXPECT_THROW(midtrain(fresh, small_stage(Stage::kMidtrain, 2), pre_sets()), ContractError);
}

TEST(Midtrain, EnablingModulesKeepsOutputsAtStepZero) {
  Policy p(PolicyConfig{}, 3);
  pretrain(p, small_stage(Stage::kPretrain, 20), pre_sets());
  // Perturb the new-module outputs so the reset is exercised.
  p.params().set_values("mem.out", std::vector<double>(p.params()["mem.out"].numel(), 0.3));
  Policy q = p;
  q.params() = p.params().clone();
  reset_expansion_outputs(q);
  q.config().enc.motion = true;
  q.config().use_memory = true;
  q.config().use_physics = true;
  std::mt19937_64 rng(2);
  double worst = 0;
  for (const auto& set : pre_sets()) {
    const auto& e = set.episodes[1];
    for (std::size_t t : {std::size_t(0), e.length() / 2, e.length() - 1}) {
      Sample s = build_sample(e, t, q, true, true);
      Conditioning c0, c1;
      c0.embodiment = c1.embodiment = s.embodiment;
      c0.state = c1.state = s.state;
      c0.h = p.cognition(s.patches, s.task);
      c0.m = p.memory_feature({}, c0.h);
      c1.h = q.cognition(s.patches, s.task);
      std::vector<Tensor> entries;
      for (const auto& mp : s.memory_patches) entries.push_back(q.cognition(mp, s.task));
      c1.m = q.memory_feature(entries, c1.h);
      Tensor a = flow::gaussian(p.action_shape(s.embodiment), 1.0, rng);
      auto v0 = p.velocity(c0, a, Tensor(), 0.3).action;
      auto v1 = q.velocity(c1, a, Tensor(), 0.3).action;
      for (std::size_t i = 0; i < v0.numel(); ++i) worst = std::max(worst, std::abs(v0.values()[i] - v1.values()[i]));
    }
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Midtrain, AlignmentWarmupFreezesPretrainedParams) {
  Policy p(PolicyConfig{}, 3);
  pretrain(p, small_stage(Stage::kPretrain, 5), pre_sets());
  ParamStore before = p.params().clone();
  auto sets = pre_sets();
  sets.push_back(expert_set(envs::EnvKind::kProbe, 8));
  auto cfg = small_stage(Stage::kMidtrain, 5);
  cfg.alignment_warmup = 5;
  cfg.modality_dropout = 0.0;
  midtrain(p, cfg, sets);
  for (const auto& [name, t] : before) {
    const bool fresh = is_expansion_param(name) || name.rfind("head.probe.", 0) == 0;
    if (!fresh) {
      EXPECT_EQ(hash_values(t), hash_values(p.params()[name])) << name;
    }
  }
  EXPECT_FALSE(params_equal(before, p.params(), "head.probe."));
  EXPECT_FALSE(params_equal(before, p.params(), "phys."));
  EXPECT_TRUE(p.config().use_memory && p.config().use_physics && p.config().enc.motion);
  EXPECT_EQ(p.stats().count(2), 1u);
  // After warmup everything trains.
  ParamStore mid = p.params().clone();
  cfg.alignment_warmup = 0;
  midtrain(p, cfg, sets);
  EXPECT_FALSE(params_equal(mid, p.params(), "msat."));
}

TEST(Midtrain, FullMemoryDropoutZeroesMemory) {
  Policy p(PolicyConfig{}, 3);
  pretrain(p, small_stage(Stage::kPretrain, 3), pre_sets());
  ParamStore before = p.params().clone();
  auto cfg = small_stage(Stage::kMidtrain, 4);
  cfg.modality_dropout = 1.0;
  auto rep = midtrain(p, cfg, pre_sets());
  EXPECT_EQ(rep.memory_drops, rep.samples);
  EXPECT_EQ(rep.physics_drops, rep.samples);
  EXPECT_TRUE(params_equal(before, p.params(), "mem."));
}

TEST(Midtrain, DropoutRateUnbiased) {
  for (double rate : {0.0, 0.3, 0.7, 1.0}) {
    StageConfig cfg;
    cfg.modality_dropout = rate;
    cfg.state_dropout = rate;
    std::mt19937_64 rng(11);
    std::size_t mem = 0, phys = 0, st = 0;
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) {
      auto d = draw_dropout(cfg, rng);
      mem += d.memory;
      phys += d.physics;
      st += d.state;
    }
    EXPECT_NEAR(double(mem) / n, rate, 0.02);
    EXPECT_NEAR(double(phys) / n, rate, 0.02);
    EXPECT_NEAR(double(st) / n, rate, 0.02);
  }
}

TEST(Finetune, FrozenLowerLayersAndLossDecreases) {
  Policy p(PolicyConfig{}, 3);
  pretrain(p, small_stage(Stage::kPretrain, 10), pre_sets());
  ParamStore before = p.params().clone();
  auto cfg = small_stage(Stage::kFinetune, 100);
  cfg.lr = 2e-3;
  auto rep = finetune(p, cfg, {pre_sets()[0]});
  for (const char* pre : {"enc.l0.", "enc.l1.", "enc.patch.", "enc.pos", "enc.query", "enc.instr"}) {
    EXPECT_TRUE(params_equal(before, p.params(), pre)) << pre;
  }
  EXPECT_FALSE(params_equal(before, p.params(), "enc.l3."));
  EXPECT_LT(mean_range(rep.losses, 90, 100), mean_range(rep.losses, 0, 10));
  EXPECT_TRUE(is_frozen_encoder_param("enc.l1.wq", 4, 2));
  EXPECT_FALSE(is_frozen_encoder_param("enc.l2.wq", 4, 2));
  EXPECT_FALSE(is_frozen_encoder_param("enc.final_norm", 4, 2));
  EXPECT_FALSE(is_frozen_encoder_param("msat.b0.c.wq", 4, 2));
}

TEST(Finetune, StateDropoutZeroPassesState) {
  StageConfig cfg;
  cfg.state_dropout = 0.0;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) ASSERT_FALSE(draw_dropout(cfg, rng).state);
}

TEST(Evaluate, ExpertWrappedIsPerfect) {
  ExpertController ex;
  for (auto k : {envs::EnvKind::kConveyor, envs::EnvKind::kShell, envs::EnvKind::kProbe}) {
    EvalOptions eo;
    eo.episodes = 50;
    eo.seed = 500;
    eo.exec_horizon = 4;
    auto r = evaluate(k, ex, eo, 8);
    EXPECT_EQ(r.success_rate, 1.0) << envs::kind_name(k);
    EXPECT_GT(r.mean_length, 0.0);
  }
}

TEST(Evaluate, RandomShellNearChance) {
  RandomController rc;
  EvalOptions eo;
  eo.episodes = 1000;
  eo.seed = 77;
  auto r = evaluate(envs::EnvKind::kShell, rc, eo, 8);
  const double sd = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 1000.0);
  EXPECT_NEAR(r.success_rate, 1.0 / 3.0, 3 * sd);
  EXPECT_GE(r.success_rate, 0.0);
  EXPECT_LE(r.success_rate, 1.0);
}

TEST(Evaluate, PolicyRunsAndRejectsLongHorizon) {
  Policy p(PolicyConfig{}, 3);
  auto sets = pre_sets();
  sets.push_back(expert_set(envs::EnvKind::kProbe, 4));
  pretrain(p, small_stage(Stage::kPretrain, 2), sets);
  midtrain(p, small_stage(Stage::kMidtrain, 2), sets);
  EvalOptions eo;
  eo.episodes = 3;
  eo.exec_horizon = 3;
  for (auto k : {envs::EnvKind::kConveyor, envs::EnvKind::kShell, envs::EnvKind::kProbe}) {
    auto r1 = evaluate_policy(k, p, eo, {});
    auto r2 = evaluate_policy(k, p, eo, {});
    EXPECT_GE(r1.success_rate, 0.0);
    EXPECT_LE(r1.success_rate, 1.0);
    EXPECT_EQ(r1.lengths, r2.lengths);
  }
  eo.exec_horizon = 9;
  EXPECT_THROW(evaluate_policy(envs::EnvKind::kShell, p, eo, {}), ConfigError);
}
