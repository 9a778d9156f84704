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

// Turning recorded episodes into training samples.

#include <functional>
#include <optional>
#include <vector>

#include "rldx/envs/episode.hpp"
#include "rldx/trainer/policy.hpp"

namespace rldx::trainer {

/// Places an env frame on the encoder's shared canvas, zero-filling unused channels/rows/columns.
inline std::vector<float> to_canvas(const std::vector<float>& frame, const envs::EnvSpec& spec,
                                    const encoder::EncoderConfig& cfg) {
  if (spec.channels > cfg.channels || spec.height > cfg.height || spec.width > cfg.width) {
    throw ShapeError("frame of " + envs::kind_name(spec.kind) + " does not fit the encoder canvas");
  }
  if (frame.size() != spec.frame_size()) throw ShapeError("frame size does not match its env spec");
  std::vector<float> out(cfg.frame_size(), 0.0f);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    for (std::size_t y = 0; y < spec.height; ++y) {
      for (std::size_t x = 0; x < spec.width; ++x) {
        out[(c * cfg.height + y) * cfg.width + x] = frame[(c * spec.height + y) * spec.width + x];
      }
    }
  }
  return out;
}

/// Window at step t over a frame source; indices before 0 repeat frame 0.
inline encoder::ObservationWindow window_at(const std::function<std::vector<float>(std::size_t)>& canvas_frame,
                                            std::size_t t, const encoder::EncoderConfig& cfg) {
  encoder::ObservationWindow w;
  w.offsets = cfg.offsets;
  for (int o : cfg.offsets) {
    const long idx = std::max(0L, long(t) + long(o));
    w.frames.push_back(canvas_frame(std::size_t(idx)));
  }
  return w;
}

inline Tensor episode_patches(const envs::EpisodeRecord& e, std::size_t t, const encoder::EncoderConfig& cfg) {
  const auto spec = envs::spec_of(e.kind);
  auto src = [&](std::size_t i) { return to_canvas(e.frame(i), spec, cfg); };
  return encoder::patchify(window_at(src, t, cfg), cfg);
}

inline std::vector<double> to_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

/// Percentile statistics over every step of the given episodes (one embodiment).
inline flow::NormStats compute_norm_stats(const std::vector<const envs::EpisodeRecord*>& episodes) {
  std::vector<std::vector<double>> s, a, p;
  for (const auto* e : episodes) {
    for (std::size_t t = 0; t < e->length(); ++t) {
      s.push_back(to_double(e->state(t)));
      a.push_back(to_double(e->action(t)));
      p.push_back(to_double(e->phys(t)));
    }
  }
  if (s.empty()) throw ContractError("normalization statistics need at least one recorded step");
  return {flow::compute_dim_stats(s), flow::compute_dim_stats(a), flow::compute_dim_stats(p)};
}

/// One decision point: inputs plus normalized flow targets.
struct Sample {
  std::size_t embodiment = 0;
  std::size_t task = 0;
  long t = 0;
  Tensor patches;                    // current window
  std::vector<Tensor> memory_patches;  // windows at the memory stamps, oldest first
  Tensor state;                      // normalized
  Tensor p_now;                      // normalized or undefined
  flow::FlowTarget target;
  std::optional<int> advantage;
};

/// Rows [t, t+n) of a channel, repeating the last recorded row past the end, normalized.
inline Tensor chunk_rows(const envs::EpisodeRecord& e, const std::vector<float>& ch, std::size_t dim,
                         std::size_t t, std::size_t n, const flow::DimStats& stats) {
  std::vector<double> out;
  out.reserve(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = std::min(t + i, e.length() - 1);
    auto row = flow::normalize(to_double(e.row(ch, dim, idx)), stats);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor::from_vector({n, dim}, std::move(out));
}

inline Sample build_sample(const envs::EpisodeRecord& e, std::size_t t, const Policy& policy, bool with_memory,
                           bool with_physics) {
  if (t >= e.length()) throw ContractError("sample step beyond episode end");
  const auto& cfg = policy.config();
  const auto& st = policy.stats_for(e.embodiment_id);
  Sample s;
  s.embodiment = e.embodiment_id;
  s.task = e.task_id;
  s.t = long(t);
  s.patches = episode_patches(e, t, cfg.enc);
  if (with_memory) {
    for (long stamp : memory::stamps_before(long(t), cfg.mem.capacity, cfg.mem.interval)) {
      s.memory_patches.push_back(episode_patches(e, std::size_t(stamp), cfg.enc));
    }
  }
  auto sv = flow::normalize(to_double(e.state(t)), st.state);
  s.state = Tensor::from_vector({sv.size()}, sv);
  s.target.action = chunk_rows(e, e.actions, e.action_dim, t, cfg.msat.chunk(), st.action);
  if (with_physics && e.physics_dim > 0) {
    auto pv = flow::normalize(to_double(e.phys(t)), st.physics);
    s.p_now = Tensor::from_vector({pv.size()}, pv);
    s.target.physics = chunk_rows(e, e.physics, e.physics_dim, t + 1, cfg.msat.L, st.physics);
  }
  return s;
}

}  // namespace rldx::trainer
