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

#include <random>

#include "rldx/msat/msat.hpp"
#include "rldx/numerics/gradcheck.hpp"

using namespace rldx;
using namespace rldx::msat;

namespace {

constexpr std::size_t kProbe = 2;
constexpr std::size_t kShell = 1;

Tensor rnd(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  return Tensor::from_vector(s, init::uniform(numel_of(s), -scale, scale, rng));
}

ParamStore make_params(const MsatConfig& cfg, const Registry& reg, bool physics, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore ps;
  init_trunk(ps, cfg, rng);
  for (const auto& e : reg.list()) init_head(ps, e, cfg, rng);
  init_head(ps, reg.head_dims(kAgnostic), cfg, rng);
  if (physics) {
    std::mt19937_64 prng(seed + 1000);
    init_physics_stream(ps, cfg, prng);
    for (const auto& e : reg.list()) init_physics_head(ps, e, cfg, prng);
    init_physics_head(ps, reg.head_dims(kAgnostic), cfg, prng);
  }
  return ps;
}

/// Random values for every P-stream parameter, including an open gate.
void randomize_physics(ParamStore& ps, std::mt19937_64& rng) {
  for (auto& [name, t] : ps) {
    const bool phys = name.rfind("phys.", 0) == 0 || name.find(".pnow.") != std::string::npos ||
                      name.find(".pfut.") != std::string::npos || name.find(".pout.") != std::string::npos;
    if (phys) ps.set_values(name, init::uniform(t.numel(), -0.5, 0.5, rng));
  }
  ps.set_values("phys.gate", init::uniform(1, 0.2, 0.9, rng));
}

ProjectInputs make_inputs(const MsatConfig& cfg, const Registry& reg, std::size_t emb, bool physics,
                          std::mt19937_64& rng, std::size_t n_q = 4) {
  const auto& e = reg.at(emb);
  ProjectInputs in;
  in.embodiment = emb;
  in.source_embodiment = emb;
  in.state = rnd({e.state_dim}, rng);
  in.a_noisy = rnd({cfg.chunk(), e.action_dim}, rng);
  in.h = rnd({n_q, cfg.d_model}, rng);
  in.m = rnd({n_q, cfg.d_model}, rng);
  in.tau = Tensor::scalar(0.37);
  if (physics) {
    in.p_now = rnd({e.physics_dim}, rng);
    in.p_noisy_future = rnd({cfg.L, e.physics_dim}, rng);
  }
  return in;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

}  // namespace

TEST(ProjectInputs, StreamShapes) {
  MsatConfig cfg;
  auto reg = Registry::defaults();
  auto ps = make_params(cfg, reg, true, 1);
  std::mt19937_64 rng(2);
  auto s = project_inputs(make_inputs(cfg, reg, kShell, false, rng), ps, reg, cfg);
  EXPECT_EQ(s.A.dim(0), cfg.H + 3);
  EXPECT_EQ(s.C.dim(0), 8u);
  EXPECT_FALSE(s.p_present);
  EXPECT_FALSE(s.P.defined());
  auto sp = project_inputs(make_inputs(cfg, reg, kProbe, true, rng), ps, reg, cfg);
  EXPECT_TRUE(sp.p_present);
  EXPECT_EQ(sp.P.shape(), (Shape{cfg.L + 1, cfg.d_model}));
  auto bad = make_inputs(cfg, reg, kShell, false, rng);
  bad.embodiment = 7;
  EXPECT_THROW(project_inputs(bad, ps, reg, cfg), ContractError);
}

TEST(ProjectInputs, AgnosticHeadZeroPads) {
  MsatConfig cfg;
  Registry reg({{"two", 2, 2, 0}, {"four", 4, 4, 0}});
  auto ps = make_params(cfg, reg, false, 3);
  std::mt19937_64 rng(4);
  auto in = make_inputs(cfg, reg, 0, false, rng);
  in.embodiment = kAgnostic;
  in.source_embodiment = 0;
  auto s = project_inputs(in, ps, reg, cfg);
  Tensor padded = pad_cols(in.a_noisy, 2, 4);
  for (std::size_t r = 0; r < cfg.chunk(); ++r) {
    EXPECT_EQ(padded.at(r, 2), 0.0);
    EXPECT_EQ(padded.at(r, 3), 0.0);
  }
  Tensor expect = add(matmul(padded, ps["head.agnostic.act.w"]), ps["head.agnostic.act.b"]);
  Tensor act_rows = split(s.A, 0, {2, cfg.chunk()})[1];
  EXPECT_EQ(act_rows.values(), expect.values());
  auto out = msat_forward(in, ps, reg, cfg);
  EXPECT_EQ(out.v_action.shape(), (Shape{cfg.chunk(), 2}));
}

TEST(MultiStreamBlock, AbsentPhysicsMatchesPhysicsFreeParams) {
  MsatConfig cfg;
  auto reg = Registry::defaults();
  auto with_p = make_params(cfg, reg, true, 5);
  auto without_p = make_params(cfg, reg, false, 5);
  std::mt19937_64 rng(6);
  auto s = project_inputs(make_inputs(cfg, reg, kShell, false, rng), without_p, reg, cfg);
  auto a = multi_stream_block(s, with_p, cfg, 0);
  auto b = multi_stream_block(s, without_p, cfg, 0);
  EXPECT_EQ(a.C.values(), b.C.values());
  EXPECT_EQ(a.A.values(), b.A.values());
  EXPECT_EQ(a.C.shape(), s.C.shape());
  EXPECT_EQ(a.A.shape(), s.A.shape());
}

TEST(MultiStreamBlock, ZeroResidualBranchesAreIdentity) {
  MsatConfig cfg;
  auto reg = Registry::defaults();
  auto ps = make_params(cfg, reg, true, 7);
  for (const char* p : {"msat.b0.c.", "msat.b0.a.", "phys.b0.p."}) {
    for (const char* w : {"wo", "w2"}) {
      const std::string n = std::string(p) + w;
      ps.set_values(n, std::vector<double>(ps[n].numel(), 0.0));
    }
  }
  std::mt19937_64 rng(8);
  auto s = project_inputs(make_inputs(cfg, reg, kProbe, true, rng), ps, reg, cfg);
  auto o = multi_stream_block(s, ps, cfg, 0);
  EXPECT_EQ(o.C.values(), s.C.values());
  EXPECT_EQ(o.A.values(), s.A.values());
  EXPECT_EQ(o.P.values(), s.P.values());
}

TEST(MergeStreams, InverseAndSegments) {
  MsatConfig cfg;
  auto reg = Registry::defaults();
  auto ps = make_params(cfg, reg, false, 9);
  std::mt19937_64 rng(10);
  auto s = project_inputs(make_inputs(cfg, reg, 0, false, rng), ps, reg, cfg);
  auto m = merge_streams(s);
  EXPECT_EQ(m.C.dim(0), s.C.dim(0) + s.A.dim(0));
  EXPECT_EQ(m.c_len, s.C.dim(0));
  EXPECT_EQ(m.c_len + m.a_len, m.C.dim(0));  // A segment is the contiguous tail
  auto [c, a] = split_merged(m);
  EXPECT_EQ(c.values(), s.C.values());
  EXPECT_EQ(a.values(), s.A.values());
  EXPECT_THROW(merge_streams(m), ContractError);
}

TEST(MaskPhysics, IdempotentAndNoOpWhenAbsent) {
  MsatConfig cfg;
  auto reg = Registry::defaults();
  auto ps = make_params(cfg, reg, true, 11);
  std::mt19937_64 rng(12);
  auto s = project_inputs(make_inputs(cfg, reg, kProbe, true, rng), ps, reg, cfg);
  auto m1 = mask_physics(s);
  auto m2 = mask_physics(m1);
  EXPECT_FALSE(m1.p_present);
  EXPECT_FALSE(m2.p_present);
  EXPECT_EQ(m1.C.values(), m2.C.values());
  EXPECT_EQ(m1.A.values(), m2.A.values());
  auto plain = project_inputs(make_inputs(cfg, reg, 0, false, rng), ps, reg, cfg);
  auto pm = mask_physics(plain);
  EXPECT_EQ(pm.C.values(), plain.C.values());
  EXPECT_EQ(pm.A.values(), plain.A.values());
}

TEST(MaskPhysics, EquivalentToPhysicsFreeModelForRandomPParams) {
  MsatConfig cfg;
  auto reg = Registry::defaults();
  auto full = make_params(cfg, reg, true, 13);
  auto bare = make_params(cfg, reg, false, 13);
  for (int trial = 0; trial < 5; ++trial) {
    std::mt19937_64 rng(100 + trial);
    randomize_physics(full, rng);
    auto in = make_inputs(cfg, reg, kProbe, true, rng);
    auto masked = mask_physics(project_inputs(in, full, reg, cfg));
    auto a = msat_run(masked, full, reg, cfg, kProbe, kProbe);
    auto in_bare = in;
    in_bare.p_now = Tensor();
    in_bare.p_noisy_future = Tensor();
    auto b = msat_forward(in_bare, bare, reg, cfg);
    EXPECT_LE(max_abs_diff(a.v_action, b.v_action), 1e-12);
    EXPECT_FALSE(a.v_physics.defined());
  }
}

TEST(MsatForward, ShapesDeterminismAndNearZeroPhysicsAtInit) {
  MsatConfig cfg;
  auto reg = Registry::defaults();
  auto ps = make_params(cfg, reg, true, 14);
  std::mt19937_64 rng(15);
  auto in = make_inputs(cfg, reg, kProbe, true, rng);
  auto out = msat_forward(in, ps, reg, cfg);
  EXPECT_EQ(out.v_action.shape(), (Shape{cfg.chunk(), 1}));
  EXPECT_EQ(out.v_physics.shape(), (Shape{cfg.L, 1}));
  EXPECT_EQ(msat_forward(in, ps, reg, cfg).v_action.values(), out.v_action.values());
  auto masked = msat_run(mask_physics(project_inputs(in, ps, reg, cfg)), ps, reg, cfg, kProbe, kProbe);
  EXPECT_LE(max_abs_diff(out.v_action, masked.v_action), 1e-6);
  for (double v : out.v_physics.values()) EXPECT_EQ(v, 0.0);
}

TEST(MsatForward, TimestepSensitivity) {
  MsatConfig cfg;
  auto reg = Registry::defaults();
  auto ps = make_params(cfg, reg, false, 16);
  std::mt19937_64 rng(17);
  auto in = make_inputs(cfg, reg, 0, false, rng);
  in.tau = Tensor::scalar(0.0);
  auto a = msat_forward(in, ps, reg, cfg).v_action;
  in.tau = Tensor::scalar(1.0);
  auto b = msat_forward(in, ps, reg, cfg).v_action;
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
}

TEST(MsatForward, ARopeLogitsInvariantToGlobalShift) {
  MsatConfig cfg;
  auto reg = Registry::defaults();
  auto ps = make_params(cfg, reg, false, 18);
  std::mt19937_64 rng(19);
  auto s = project_inputs(make_inputs(cfg, reg, 0, false, rng), ps, reg, cfg);
  const std::string p = "msat.b0.a.";
  Tensor n = rmsnorm(s.A, ps[p + "norm1"], cfg.eps);
  Tensor q = rmsnorm(matmul(n, ps[p + "wq"]), ps[p + "qn"], cfg.eps);
  Tensor k = rmsnorm(matmul(n, ps[p + "wk"]), ps[p + "kn"], cfg.eps);
  auto logits = [&](double shift) {
    std::vector<double> pos(s.a_len);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = shift + double(i);
    Tensor kr = rope(k, pos, cfg.rope_base);
    std::vector<double> kt(kr.numel());
    const std::size_t rows = kr.dim(0), d = kr.dim(1);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < d; ++j) kt[j * rows + i] = kr.at(i, j);
    return matmul(rope(q, pos, cfg.rope_base), Tensor::from_vector({d, rows}, kt));
  };
  Tensor l0 = logits(0.0), l1 = logits(13.0);
  EXPECT_LE(max_abs_diff(l0, l1), 1e-12);

  // And the model itself runs with shifted positions.
  cfg.a_position_offset = 13.0;
  auto in = make_inputs(cfg, reg, 0, false, rng);
  EXPECT_TRUE(msat_forward(in, ps, reg, cfg).v_action.all_finite());
}

TEST(MsatForward, GradCheckTinyConfig) {
  MsatConfig cfg;
  cfg.n_phase1 = 1;
  cfg.n_phase2 = 1;
  cfg.H = 3;
  cfg.L = 4;
  Registry reg({{"probe", 1, 1, 1}});
  auto ps = make_params(cfg, reg, true, 20);
  std::mt19937_64 rng(21);
  randomize_physics(ps, rng);
  ps.set_values("phys.gate", {0.6});
  auto in = make_inputs(cfg, reg, 0, true, rng, 2);
  auto r = rnd({cfg.chunk(), 1}, rng);
  auto rp = rnd({cfg.L, 1}, rng);
  auto f = [&] {
    auto out = msat_forward(in, ps, reg, cfg);
    return add(sum(mul(out.v_action, r)), sum(mul(out.v_physics, rp)));
  };
  auto res = finite_diff_check_detailed(f, ps, 1e-5);
  EXPECT_LE(res.max_rel_error, 1e-4) << res.worst_param << "[" << res.worst_index << "]";
}
