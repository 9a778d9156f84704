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

// Cognition backbone: patch embedding over a short frame window, a small
// causal transformer with a motion (self-similarity) hook and a past-frame
// pooling hook, and appended query tokens whose outputs form h_t.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "rldx/numerics/ops.hpp"
#include "rldx/numerics/params.hpp"

namespace rldx::encoder {

struct EncoderConfig {
  std::size_t d = 16;
  std::size_t n_layers = 4;
  std::size_t n_heads = 2;
  std::size_t ffn_hidden = 32;
  std::size_t stss_layer_index = 1;
  std::size_t stss_radius = 1;
  std::size_t stss_hidden = 16;
  std::size_t compress_layer_index = 2;
  std::size_t n_q = 4;
  std::size_t extract_layer_index = 4;
  std::size_t n_tasks = 8;
  // Frame geometry and window.
  std::size_t channels = 3;
  std::size_t height = 1;
  std::size_t width = 24;
  std::size_t patch_h = 1;
  std::size_t patch_w = 2;
  std::vector<int> offsets{-6, -4, -2, 0};
  double rope_base = 100.0;
  double eps = 1e-6;
  // Hooks.
  bool motion = true;
  bool compress = true;

  std::size_t frames() const { return offsets.size(); }
  std::size_t patches_per_frame() const { return (height / patch_h) * (width / patch_w); }
  std::size_t patch_dim() const { return channels * patch_h * patch_w; }
  std::size_t frame_size() const { return channels * height * width; }

  void validate() const {
    if (offsets.empty()) throw ConfigError("encoder: at least one frame offset required");
    for (std::size_t i = 1; i < offsets.size(); ++i) {
      if (offsets[i] <= offsets[i - 1]) throw ConfigError("encoder: offsets must be strictly increasing");
    }
    if (offsets.back() != 0) throw ConfigError("encoder: offsets must end at 0");
    if (height % patch_h != 0 || width % patch_w != 0) {
      throw ShapeError("encoder: frame " + std::to_string(height) + "x" + std::to_string(width) +
                       " not divisible by patch " + std::to_string(patch_h) + "x" +
                       std::to_string(patch_w));
    }
    if (d % n_heads != 0 || d % 2 != 0) throw ConfigError("encoder: d must be even and divisible by heads");
    if (stss_layer_index >= n_layers) throw ConfigError("encoder: stss_layer_index must be < n_layers");
    if (compress_layer_index >= n_layers) throw ConfigError("encoder: compress_layer_index must be < n_layers");
    if (extract_layer_index > n_layers) throw ConfigError("encoder: extract_layer_index must be <= n_layers");
    if (motion && compress && frames() > 1 && stss_layer_index > compress_layer_index) {
      throw ConfigError("encoder: motion injection must precede past-frame compression");
    }
    if (n_q == 0) throw ConfigError("encoder: n_q must be positive");
  }
};

/// K+1 frames ordered oldest to newest, each channels*height*width values.
struct ObservationWindow {
  std::vector<std::vector<float>> frames;
  std::vector<int> offsets;
};

/// Token segment bookkeeping for the encoder sequence.
struct Layout {
  std::size_t past = 0;     // past-frame tokens (or 1 context token after compression)
  std::size_t current = 0;  // current-frame tokens
  std::size_t instr = 1;
  std::size_t queries = 0;
  bool compressed = false;

  std::size_t total() const { return past + current + instr + queries; }
  std::size_t frame_tokens() const { return past + current; }
};

/// Parameter names live under "enc.".
inline void init_params(ParamStore& ps, const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.d, f = cfg.ffn_hidden;
  const std::size_t slots = cfg.frames() * cfg.patches_per_frame();
  ps.add("enc.patch.w", init::linear_weight(cfg.patch_dim(), d, rng));
  ps.add("enc.patch.b", init::zeros({d}));
  ps.add("enc.pos", Tensor::parameter({slots, d}, init::normal(slots * d, 0.1, rng)));
  ps.add("enc.instr", Tensor::parameter({cfg.n_tasks, d}, init::normal(cfg.n_tasks * d, 0.5, rng)));
  ps.add("enc.query", Tensor::parameter({cfg.n_q, d}, init::normal(cfg.n_q * d, 0.5, rng)));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l) + ".";
    ps.add(p + "norm", init::ones({d}));
    ps.add(p + "wq", init::linear_weight(d, d, rng));
    ps.add(p + "wk", init::linear_weight(d, d, rng));
    ps.add(p + "wv", init::linear_weight(d, d, rng));
    ps.add(p + "qn", init::ones({d}));
    ps.add(p + "kn", init::ones({d}));
    ps.add(p + "wo", init::linear_weight(d, d, rng, 0.5));
    ps.add(p + "w1", init::linear_weight(d, 2 * f, rng));
    ps.add(p + "w2", init::linear_weight(f, d, rng, 0.5));
  }
  ps.add("enc.final_norm", init::ones({d}));
  const std::size_t sdim = cfg.frames() * (2 * cfg.stss_radius + 1);
  ps.add("enc.stss.w1", init::linear_weight(sdim, 2 * cfg.stss_hidden, rng));
  ps.add("enc.stss.b1", init::zeros({2 * cfg.stss_hidden}));
  ps.add("enc.stss.w2", init::zeros({cfg.stss_hidden, d}));
  ps.add("enc.stss.b2", init::zeros({d}));
}

/// Rearranges a window into non-overlapping patch rows [(K+1)*P, C*ph*pw].
inline Tensor patchify(const ObservationWindow& obs, const EncoderConfig& cfg) {
  if (obs.frames.size() != cfg.frames()) {
    throw ShapeError("observation window has " + std::to_string(obs.frames.size()) +
                     " frames, expected " + std::to_string(cfg.frames()));
  }
  if (!obs.offsets.empty() && obs.offsets != cfg.offsets) {
    throw ContractError("observation offsets do not match the encoder configuration");
  }
  const std::size_t P = cfg.patches_per_frame(), pd = cfg.patch_dim();
  const std::size_t pw_count = cfg.width / cfg.patch_w;
  std::vector<double> out(cfg.frames() * P * pd);
  for (std::size_t f = 0; f < cfg.frames(); ++f) {
    const auto& fr = obs.frames[f];
    if (fr.size() != cfg.frame_size()) {
      throw ShapeError("frame " + std::to_string(f) + " has " + std::to_string(fr.size()) +
                       " values, expected " + std::to_string(cfg.frame_size()));
    }
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t py = p / pw_count, px = p % pw_count;
      std::size_t k = 0;
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        for (std::size_t y = 0; y < cfg.patch_h; ++y) {
          for (std::size_t x = 0; x < cfg.patch_w; ++x) {
            const std::size_t row = py * cfg.patch_h + y, col = px * cfg.patch_w + x;
            out[(f * P + p) * pd + k++] = fr[(c * cfg.height + row) * cfg.width + col];
          }
        }
      }
    }
  }
  return Tensor::from_vector({cfg.frames() * P, pd}, std::move(out));
}

/// Linear patch projection plus learned per-(frame, patch) position embedding.
inline Tensor patch_embed(const Tensor& patches, const ParamStore& ps) {
  return add(add(matmul(patches, ps["enc.patch.w"]), ps["enc.patch.b"]), ps["enc.pos"]);
}

/// Space-time self-similarity of frame features [F, P, d] within radius U.
inline Tensor stss(const Tensor& features, std::size_t radius) { return rldx::stss(features, radius); }

/// features + MLP(stss(features)) for frame tokens [F*P, d].
inline Tensor motion_inject(const Tensor& frame_tokens, const ParamStore& ps, const EncoderConfig& cfg) {
  const std::size_t F = cfg.frames(), P = cfg.patches_per_frame();
  Tensor sim = encoder::stss(reshape(frame_tokens, {F, P, cfg.d}), cfg.stss_radius);
  Tensor flat = reshape(sim, {F * P, F * (2 * cfg.stss_radius + 1)});
  Tensor hid = swiglu(add(matmul(flat, ps["enc.stss.w1"]), ps["enc.stss.b1"]));
  Tensor upd = add(matmul(hid, ps["enc.stss.w2"]), ps["enc.stss.b2"]);
  return add(frame_tokens, upd);
}

/// Replaces past-frame tokens by their mean, placed first.
inline std::pair<Tensor, Layout> compress_past(const Tensor& hidden, Layout layout) {
  if (layout.compressed) throw ContractError("compress_past: sequence already compressed");
  if (hidden.dim(0) != layout.total()) throw ShapeError("compress_past: layout does not match hidden rows");
  layout.compressed = true;
  if (layout.past == 0) return {hidden, layout};
  auto parts = split(hidden, 0, {layout.past, hidden.dim(0) - layout.past});
  Tensor ctx = mean_rows(parts[0]);
  layout.past = 1;
  return {concat({ctx, parts[1]}, 0), layout};
}

/// Causal mask [n, n] assembled from per-segment blocks so a capture sees
/// the construction (and folding removes it).
inline Tensor causal_mask(const std::vector<std::size_t>& segments) {
  std::size_t n = 0;
  for (auto s : segments) n += s;
  std::vector<Tensor> rows;
  std::size_t start = 0;
  for (auto s : segments) {
    if (s == 0) continue;
    std::vector<double> block(s * n, 0.0);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j <= start + i; ++j) block[i * n + j] = 1.0;
    rows.push_back(Tensor::from_vector({s, n}, std::move(block)));
    start += s;
  }
  return concat(rows, 0);
}

/// Rotation table for consecutive positions 0..n-1 (constant subgraph).
inline Tensor rope_table(const std::vector<double>& positions, std::size_t d, double base) {
  return sinusoidal_table(Tensor::from_vector({positions.size()}, positions), d, base, 1.0);
}

/// One parallel-residual block: x + Attn(n) + FFN(n) with n = RMSNorm(x).
/// Returns the two branch outputs so the caller decides how to sum them.
inline std::pair<Tensor, Tensor> block_branches(const Tensor& x, const Tensor& mask, const Tensor& table,
                                                const ParamStore& ps, const EncoderConfig& cfg,
                                                std::size_t l) {
  const std::string p = "enc.l" + std::to_string(l) + ".";
  Tensor n = rmsnorm(x, ps[p + "norm"], cfg.eps);
  Tensor q = rope_apply(rmsnorm(matmul(n, ps[p + "wq"]), ps[p + "qn"], cfg.eps), table);
  Tensor k = rope_apply(rmsnorm(matmul(n, ps[p + "wk"]), ps[p + "kn"], cfg.eps), table);
  Tensor v = matmul(n, ps[p + "wv"]);
  const double scale = 1.0 / std::sqrt(double(cfg.d / cfg.n_heads));
  Tensor a = matmul(attention(q, k, v, mask, {cfg.n_heads, scale}), ps[p + "wo"]);
  Tensor f = matmul(swiglu(matmul(n, ps[p + "w1"])), ps[p + "w2"]);
  return {a, f};
}

struct EncodeTrace {
  std::vector<Layout> layouts;  // layout seen by each processed layer
  std::vector<std::size_t> mask_dims;
};

/// Full encoder: returns the n_q cognition tokens [n_q, d].
inline Tensor encode_patches(const Tensor& patches, std::size_t task, const ParamStore& ps,
                             const EncoderConfig& cfg, EncodeTrace* trace_out = nullptr) {
  cfg.validate();
  if (task >= cfg.n_tasks) {
    throw ContractError("instruction id " + std::to_string(task) + " out of range");
  }
  const std::size_t P = cfg.patches_per_frame();
  const std::size_t F = cfg.frames();
  Tensor frames = patch_embed(patches, ps);
  Tensor instr_tok = slice_rows(ps["enc.instr"], task, task + 1);
  Tensor x = concat({frames, instr_tok, ps["enc.query"]}, 0);
  Layout layout{(F - 1) * P, P, 1, cfg.n_q, false};

  const bool do_motion = cfg.motion && F > 1;
  const bool do_compress = cfg.compress;
  for (std::size_t l = 0; l < cfg.extract_layer_index; ++l) {
    if (do_motion && l == cfg.stss_layer_index) {
      auto parts = split(x, 0, {layout.frame_tokens(), layout.instr + layout.queries});
      x = concat({motion_inject(parts[0], ps, cfg), parts[1]}, 0);
    }
    if (do_compress && l == cfg.compress_layer_index) {
      auto res = compress_past(x, layout);
      x = res.first;
      layout = res.second;
    }
    const std::size_t n = layout.total();
    std::vector<double> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = double(i);
    Tensor mask = causal_mask({layout.past, layout.current, layout.instr, layout.queries});
    Tensor table = rope_table(positions, cfg.d, cfg.rope_base);
    if (trace_out) {
      trace_out->layouts.push_back(layout);
      trace_out->mask_dims.push_back(mask.dim(0));
    }
    auto [a, f] = block_branches(x, mask, table, ps, cfg, l);
    x = add(add(x, a), f);
  }
  Tensor normed = rmsnorm(x, ps["enc.final_norm"], cfg.eps);
  auto parts = split(normed, 0, {layout.total() - layout.queries, layout.queries});
  return parts[1];
}

inline Tensor encode(const ObservationWindow& obs, std::size_t task, const ParamStore& ps,
                     const EncoderConfig& cfg) {
  return encode_patches(patchify(obs, cfg), task, ps, cfg);
}

}  // namespace rldx::encoder
