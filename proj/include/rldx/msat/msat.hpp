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

// Multi-stream action transformer. Cognition (C), action (A) and physics (P)
// token streams keep separate weights and meet only inside joint attention.
// After the first phase C and A are merged into one stream.

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rldx/numerics/ops.hpp"
#include "rldx/numerics/params.hpp"

namespace rldx::msat {

struct Embodiment {
  std::string name;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::size_t physics_dim = 0;
};

inline constexpr std::size_t kAgnostic = std::numeric_limits<std::size_t>::max();

class Registry {
 public:
  Registry() = default;
  explicit Registry(std::vector<Embodiment> list) : list_(std::move(list)) {}

  static Registry defaults() {
    return Registry({{"conveyor", 1, 1, 0}, {"shell", 2, 2, 0}, {"probe", 1, 1, 1}});
  }

  std::size_t size() const { return list_.size(); }
  const Embodiment& at(std::size_t id) const {
    if (id >= list_.size()) throw ContractError("unknown embodiment id " + std::to_string(id));
    return list_[id];
  }
  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < list_.size(); ++i)
      if (list_[i].name == name) return i;
    throw ContractError("unknown embodiment: " + name);
  }
  std::size_t max_state() const { return max_of(&Embodiment::state_dim); }
  std::size_t max_action() const { return max_of(&Embodiment::action_dim); }
  std::size_t max_physics() const { return max_of(&Embodiment::physics_dim); }

  /// Dims seen by a head: the embodiment's own, or the padded maxima for the agnostic head.
  Embodiment head_dims(std::size_t id) const {
    if (id == kAgnostic) return {"agnostic", max_state(), max_action(), max_physics()};
    return at(id);
  }
  static std::string head_prefix(const Embodiment& e) { return "head." + e.name + "."; }

  const std::vector<Embodiment>& list() const { return list_; }

 private:
  std::size_t max_of(std::size_t Embodiment::*f) const {
    std::size_t m = 0;
    for (const auto& e : list_) m = std::max(m, e.*f);
    return m;
  }
  std::vector<Embodiment> list_;
};

struct MsatConfig {
  std::size_t d_model = 16;
  std::size_t n_heads = 2;
  std::size_t n_phase1 = 2;
  std::size_t n_phase2 = 2;
  std::size_t H = 7;  // chunk has H+1 actions
  std::size_t L = 8;  // future physics tokens, equal to H+1
  std::size_t ffn_hidden = 32;
  std::size_t in_hidden = 16;  // width of the state/physics input encoders
  double rope_base = 100.0;
  double time_scale = 100.0;
  double eps = 1e-6;
  double a_position_offset = 0.0;  // shifts every A-stream RoPE position
  double physics_gate_init = 1e-9;

  std::size_t chunk() const { return H + 1; }

  void validate() const {
    if (L != H + 1) throw ConfigError("msat: L must equal H+1");
    if (n_phase1 < 1 || n_phase2 < 1) throw ConfigError("msat: phase block counts must be >= 1");
    if (d_model % n_heads != 0 || d_model % 2 != 0) throw ConfigError("msat: bad d_model/heads");
  }
};

namespace detail_ {

inline void add_bundle(ParamStore& ps, const std::string& p, const MsatConfig& cfg, std::mt19937_64& rng) {
  const std::size_t d = cfg.d_model, f = cfg.ffn_hidden;
  ps.add(p + "norm1", init::ones({d}));
  ps.add(p + "wq", init::linear_weight(d, d, rng));
  ps.add(p + "wk", init::linear_weight(d, d, rng));
  ps.add(p + "wv", init::linear_weight(d, d, rng));
  ps.add(p + "qn", init::ones({d}));
  ps.add(p + "kn", init::ones({d}));
  ps.add(p + "wo", init::linear_weight(d, d, rng, 0.5));
  ps.add(p + "norm2", init::ones({d}));
  ps.add(p + "w1", init::linear_weight(d, 2 * f, rng));
  ps.add(p + "w2", init::linear_weight(f, d, rng, 0.5));
}

inline void add_mlp(ParamStore& ps, const std::string& p, std::size_t in, std::size_t hidden, std::size_t out,
                    std::mt19937_64& rng) {
  ps.add(p + "w1", init::linear_weight(in, 2 * hidden, rng));
  ps.add(p + "b1", init::zeros({2 * hidden}));
  ps.add(p + "w2", init::linear_weight(hidden, out, rng));
  ps.add(p + "b2", init::zeros({out}));
}

inline Tensor mlp(const Tensor& x, const ParamStore& ps, const std::string& p) {
  Tensor h = swiglu(add(matmul(x, ps[p + "w1"]), ps[p + "b1"]));
  return add(matmul(h, ps[p + "w2"]), ps[p + "b2"]);
}

}  // namespace detail_

/// Head parameters for one embodiment (or the agnostic head).
inline void init_head(ParamStore& ps, const Embodiment& e, const MsatConfig& cfg, std::mt19937_64& rng) {
  const std::string p = Registry::head_prefix(e);
  const std::size_t d = cfg.d_model;
  detail_::add_mlp(ps, p + "state.", e.state_dim, cfg.in_hidden, d, rng);
  ps.add(p + "act.w", init::linear_weight(e.action_dim, d, rng));
  ps.add(p + "act.b", init::zeros({d}));
  ps.add(p + "out.w", init::linear_weight(d, e.action_dim, rng, 0.5));
  ps.add(p + "out.b", init::zeros({e.action_dim}));
}

/// Physics-side head parameters; output weights start at zero.
inline void init_physics_head(ParamStore& ps, const Embodiment& e, const MsatConfig& cfg, std::mt19937_64& rng) {
  if (e.physics_dim == 0) return;
  const std::string p = Registry::head_prefix(e);
  const std::size_t d = cfg.d_model;
  detail_::add_mlp(ps, p + "pnow.", e.physics_dim, cfg.in_hidden, d, rng);
  ps.add(p + "pfut.w", init::linear_weight(e.physics_dim, d, rng));
  ps.add(p + "pfut.b", init::zeros({d}));
  ps.add(p + "pout.w", init::zeros({d, e.physics_dim}));
  ps.add(p + "pout.b", init::zeros({e.physics_dim}));
}

/// Shared trunk parameters for C/A streams ("msat."), without physics.
inline void init_trunk(ParamStore& ps, const MsatConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  detail_::add_mlp(ps, "msat.time.", d, cfg.ffn_hidden, d, rng);
  for (std::size_t b = 0; b < cfg.n_phase1; ++b) {
    detail_::add_bundle(ps, "msat.b" + std::to_string(b) + ".c.", cfg, rng);
    detail_::add_bundle(ps, "msat.b" + std::to_string(b) + ".a.", cfg, rng);
  }
  for (std::size_t b = cfg.n_phase1; b < cfg.n_phase1 + cfg.n_phase2; ++b) {
    detail_::add_bundle(ps, "msat.b" + std::to_string(b) + ".ca.", cfg, rng);
  }
  ps.add("msat.final.ca", init::ones({d}));
  ps.add("msat.adv", Tensor::parameter({2, d}, init::normal(2 * d, 0.5, rng)));
}

/// P-stream parameters ("phys."), including the attention gate on P keys.
inline void init_physics_stream(ParamStore& ps, const MsatConfig& cfg, std::mt19937_64& rng) {
  const std::size_t d = cfg.d_model;
  for (std::size_t b = 0; b < cfg.n_phase1 + cfg.n_phase2; ++b) {
    detail_::add_bundle(ps, "phys.b" + std::to_string(b) + ".p.", cfg, rng);
  }
  ps.add("phys.pos", Tensor::parameter({cfg.L + 1, d}, init::normal((cfg.L + 1) * d, 0.1, rng)));
  ps.add("phys.final", init::ones({d}));
  ps.add("phys.gate", Tensor::parameter({1}, {cfg.physics_gate_init}));
}

/// C/A/P token sequences. After merging, C holds the joint CA sequence and A is empty.
struct StreamSet {
  Tensor C;
  Tensor A;
  Tensor P;
  bool p_present = false;
  bool merged = false;
  std::size_t c_len = 0;  // cognition rows (inside CA once merged)
  std::size_t a_len = 0;  // action-stream rows (inside CA once merged)
};

struct ProjectInputs {
  std::size_t embodiment = 0;  // or kAgnostic
  Tensor state;                // [state_dim]
  Tensor a_noisy;              // [H+1, action_dim]
  Tensor p_now;                // [physics_dim] or undefined
  Tensor p_noisy_future;       // [L, physics_dim] or undefined
  Tensor h;                    // [n_q, d]
  Tensor m;                    // [n_q, d]
  Tensor tau;                  // [1]
  std::optional<int> advantage;  // extra A token when set
  std::size_t source_embodiment = 0;  // real embodiment when routed through the agnostic head
};

/// Zero-pads the trailing axis of x from `from` to `to` columns.
inline Tensor pad_cols(const Tensor& x, std::size_t from, std::size_t to) {
  if (from == to) return x;
  if (from > to) throw ShapeError("pad_cols: cannot shrink");
  const std::size_t rows = x.numel() / from;
  Tensor xr = reshape(x, {rows, from});
  return concat({xr, Tensor::zeros({rows, to - from})}, 1);
}

inline StreamSet project_inputs(const ProjectInputs& in, const ParamStore& ps, const Registry& reg,
                                const MsatConfig& cfg) {
  const Embodiment head = reg.head_dims(in.embodiment);
  const Embodiment real = in.embodiment == kAgnostic ? reg.at(in.source_embodiment) : head;
  const std::string hp = Registry::head_prefix(head);
  const std::size_t d = cfg.d_model, n_act = cfg.chunk();
  if (in.state.numel() != real.state_dim) throw ShapeError("project_inputs: state dim mismatch");
  if (in.a_noisy.shape() != Shape{n_act, real.action_dim}) {
    throw ShapeError("project_inputs: action chunk " + shape_str(in.a_noisy.shape()));
  }
  StreamSet s;
  s.C = concat({in.h, in.m}, 0);
  s.c_len = s.C.dim(0);
  if (s.C.dim(1) != d) throw ShapeError("project_inputs: cognition width mismatch");

  Tensor temb = sinusoidal_embed(in.tau, d, cfg.time_scale);
  Tensor time_tok = detail_::mlp(temb, ps, "msat.time.");
  Tensor st = pad_cols(reshape(in.state, {1, real.state_dim}), real.state_dim, head.state_dim);
  Tensor state_tok = detail_::mlp(st, ps, hp + "state.");
  Tensor act = pad_cols(in.a_noisy, real.action_dim, head.action_dim);
  Tensor act_tok = add(matmul(act, ps[hp + "act.w"]), ps[hp + "act.b"]);
  std::vector<Tensor> a_parts{time_tok, state_tok, act_tok};
  if (in.advantage) a_parts.push_back(slice_rows(ps["msat.adv"], *in.advantage ? 1 : 0, *in.advantage ? 2 : 1));
  s.A = concat(a_parts, 0);
  s.a_len = s.A.dim(0);

  if (in.p_now.defined()) {
    if (real.physics_dim == 0) throw ContractError("project_inputs: embodiment has no physics channel");
    if (in.p_now.numel() != real.physics_dim || in.p_noisy_future.shape() != Shape{cfg.L, real.physics_dim}) {
      throw ShapeError("project_inputs: physics dims mismatch");
    }
    Tensor pn = pad_cols(reshape(in.p_now, {1, real.physics_dim}), real.physics_dim, head.physics_dim);
    Tensor pnow_tok = detail_::mlp(pn, ps, hp + "pnow.");
    Tensor pf = pad_cols(in.p_noisy_future, real.physics_dim, head.physics_dim);
    Tensor pf_tok = add(matmul(pf, ps[hp + "pfut.w"]), ps[hp + "pfut.b"]);
    s.P = add(concat({pnow_tok, pf_tok}, 0), ps["phys.pos"]);
    s.p_present = true;
  }
  return s;
}

/// Joins C and A into one sequence [C; A]; the segment lengths are kept.
inline StreamSet merge_streams(const StreamSet& s) {
  if (s.merged) throw ContractError("merge_streams: already merged");
  StreamSet out = s;
  out.C = concat({s.C, s.A}, 0);
  out.A = Tensor();
  out.merged = true;
  return out;
}

/// Recovers (C, A) from a merged stream.
inline std::pair<Tensor, Tensor> split_merged(const StreamSet& s) {
  if (!s.merged) return {s.C, s.A};
  auto parts = split(s.C, 0, {s.c_len, s.a_len});
  return {parts[0], parts[1]};
}

/// Removes the physics stream; later blocks neither read nor write P.
inline StreamSet mask_physics(StreamSet s) {
  s.P = Tensor();
  s.p_present = false;
  return s;
}

/// Joint mask: 1 everywhere except C/A queries reading P keys, which use the gate weight.
inline Tensor joint_mask(std::size_t ca_rows, std::size_t p_rows, const Tensor& gate) {
  const std::size_t n = ca_rows + p_rows;
  if (p_rows == 0) return Tensor::full({n, n}, 1.0);
  Tensor top = concat({Tensor::full({ca_rows, ca_rows}, 1.0), mul(Tensor::full({ca_rows, p_rows}, 1.0), gate)}, 1);
  return concat({top, Tensor::full({p_rows, n}, 1.0)}, 0);
}

/// One block. Phase-1 streams are [C, A, (P)]; merged streams are [CA, (P)].
inline StreamSet multi_stream_block(const StreamSet& in, const ParamStore& ps, const MsatConfig& cfg,
                                    std::size_t block) {
  const std::string bp = "msat.b" + std::to_string(block) + ".";
  const std::string pp = "phys.b" + std::to_string(block) + ".p.";
  std::vector<Tensor> xs;
  std::vector<std::string> prefixes;
  if (in.merged) {
    xs = {in.C};
    prefixes = {bp + "ca."};
  } else {
    xs = {in.C, in.A};
    prefixes = {bp + "c.", bp + "a."};
  }
  if (in.p_present) {
    xs.push_back(in.P);
    prefixes.push_back(pp);
  }
  // RoPE positions: identity (0) outside the A segment.
  std::vector<double> positions;
  positions.insert(positions.end(), in.c_len, 0.0);
  for (std::size_t i = 0; i < in.a_len; ++i) positions.push_back(cfg.a_position_offset + double(i));
  const std::size_t ca_rows = in.c_len + in.a_len;
  const std::size_t p_rows = in.p_present ? in.P.dim(0) : 0;
  positions.insert(positions.end(), p_rows, 0.0);

  std::vector<Tensor> qs, ks, vs;
  std::vector<std::size_t> lens;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::string& p = prefixes[i];
    Tensor n = rmsnorm(xs[i], ps[p + "norm1"], cfg.eps);
    qs.push_back(rmsnorm(matmul(n, ps[p + "wq"]), ps[p + "qn"], cfg.eps));
    ks.push_back(rmsnorm(matmul(n, ps[p + "wk"]), ps[p + "kn"], cfg.eps));
    vs.push_back(matmul(n, ps[p + "wv"]));
    lens.push_back(xs[i].dim(0));
  }
  Tensor table = sinusoidal_table(Tensor::from_vector({positions.size()}, positions), cfg.d_model,
                                  cfg.rope_base, 1.0);
  Tensor q = rope_apply(concat(qs, 0), table);
  Tensor k = rope_apply(concat(ks, 0), table);
  Tensor v = concat(vs, 0);
  Tensor mask = joint_mask(ca_rows, p_rows, in.p_present ? ps["phys.gate"] : Tensor());
  const double scale = 1.0 / std::sqrt(double(cfg.d_model / cfg.n_heads));
  auto outs = split(attention(q, k, v, mask, {cfg.n_heads, scale}), 0, lens);

  std::vector<Tensor> ys;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::string& p = prefixes[i];
    Tensor x = add(xs[i], matmul(outs[i], ps[p + "wo"]));
    Tensor f = matmul(swiglu(matmul(rmsnorm(x, ps[p + "norm2"], cfg.eps), ps[p + "w1"])), ps[p + "w2"]);
    ys.push_back(add(x, f));
  }
  StreamSet out = in;
  out.C = ys[0];
  if (!in.merged) out.A = ys[1];
  if (in.p_present) out.P = ys.back();
  return out;
}

struct MsatOutput {
  Tensor v_action;   // [H+1, action_dim]
  Tensor v_physics;  // [L, physics_dim] or undefined
};

/// Runs all blocks on a projected StreamSet and applies the output projections.
inline MsatOutput msat_run(StreamSet s, const ParamStore& ps, const Registry& reg, const MsatConfig& cfg,
                           std::size_t embodiment, std::size_t source_embodiment) {
  const Embodiment head = reg.head_dims(embodiment);
  const Embodiment real = embodiment == kAgnostic ? reg.at(source_embodiment) : head;
  const std::string hp = Registry::head_prefix(head);
  for (std::size_t b = 0; b < cfg.n_phase1; ++b) s = multi_stream_block(s, ps, cfg, b);
  s = merge_streams(s);
  for (std::size_t b = cfg.n_phase1; b < cfg.n_phase1 + cfg.n_phase2; ++b) s = multi_stream_block(s, ps, cfg, b);

  MsatOutput out;
  Tensor ca = rmsnorm(s.C, ps["msat.final.ca"], cfg.eps);
  const std::size_t n_act = cfg.chunk();
  const std::size_t tail = s.a_len - 2 - n_act;
  std::vector<std::size_t> parts{s.c_len + 2, n_act};
  if (tail) parts.push_back(tail);
  Tensor act_rows = split(ca, 0, parts)[1];
  Tensor va = add(matmul(act_rows, ps[hp + "out.w"]), ps[hp + "out.b"]);
  if (head.action_dim != real.action_dim) {
    va = split(va, 1, {real.action_dim, head.action_dim - real.action_dim})[0];
  }
  out.v_action = va;
  if (s.p_present) {
    Tensor pf = split(rmsnorm(s.P, ps["phys.final"], cfg.eps), 0, {1, cfg.L})[1];
    Tensor vp = add(matmul(pf, ps[hp + "pout.w"]), ps[hp + "pout.b"]);
    if (head.physics_dim != real.physics_dim) {
      vp = split(vp, 1, {real.physics_dim, head.physics_dim - real.physics_dim})[0];
    }
    out.v_physics = vp;
  }
  return out;
}

/// Velocity fields for the noisy action chunk (and future physics when P is present).
inline MsatOutput msat_forward(const ProjectInputs& in, const ParamStore& ps, const Registry& reg,
                               const MsatConfig& cfg) {
  StreamSet s = project_inputs(in, ps, reg, cfg);
  return msat_run(std::move(s), ps, reg, cfg, in.embodiment, in.source_embodiment);
}

}  // namespace rldx::msat
