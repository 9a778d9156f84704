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

#include <cmath>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "rldx/numerics/ops.hpp"
#include "rldx/numerics/params.hpp"

namespace rldx::memory {

struct MemoryConfig {
  std::size_t d = 16;
  std::size_t n_q = 4;
  std::size_t capacity = 3;   // n_mem
  std::size_t interval = 8;   // H+1
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t ffn_hidden = 32;
  double rope_base = 100.0;
  double eps = 1e-5;
};

/// FIFO of past cognition features stamped on a fixed interval grid.
class MemoryQueue {
 public:
  struct Entry {
    long stamp;
    Tensor feature;
  };

  MemoryQueue(std::size_t capacity, std::size_t interval) : capacity_(capacity), interval_(interval) {
    if (capacity == 0 || interval == 0) throw ConfigError("memory queue: capacity and interval must be positive");
  }

  void push(long stamp, Tensor h) {
    if (!entries_.empty() && stamp != entries_.back().stamp + long(interval_)) {
      throw ContractError("memory push: stamp " + std::to_string(stamp) + " breaks the " +
                          std::to_string(interval_) + "-step interval after " +
                          std::to_string(entries_.back().stamp));
    }
    entries_.push_back({stamp, std::move(h)});
    if (entries_.size() > capacity_) entries_.pop_front();
  }

  const std::deque<Entry>& entries() const { return entries_; }
  std::vector<Tensor> features() const {
    std::vector<Tensor> out;
    for (const auto& e : entries_) out.push_back(e.feature);
    return out;
  }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t interval() const { return interval_; }
  void clear() { entries_.clear(); }

 private:
  std::size_t capacity_;
  std::size_t interval_;
  std::deque<Entry> entries_;
};

/// Grid stamps (multiples of `interval`) strictly before t, newest `capacity` of them.
inline std::vector<long> stamps_before(long t, std::size_t capacity, std::size_t interval) {
  std::vector<long> out;
  if (t <= 0) return out;
  long last = ((t - 1) / long(interval)) * long(interval);
  for (long s = last; s >= 0 && out.size() < capacity; s -= long(interval)) out.insert(out.begin(), s);
  return out;
}

/// Parameter names live under "mem.".
inline void init_params(ParamStore& ps, const MemoryConfig& cfg, std::mt19937_64& rng) {
  const std::size_t d = cfg.d, f = cfg.ffn_hidden;
  ps.add("mem.age", Tensor::parameter({cfg.capacity + 1, d}, init::normal((cfg.capacity + 1) * d, 0.1, rng)));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "mem.l" + std::to_string(l) + ".";
    ps.add(p + "wq", init::linear_weight(d, d, rng));
    ps.add(p + "wk", init::linear_weight(d, d, rng));
    ps.add(p + "wv", init::linear_weight(d, d, rng));
    ps.add(p + "wo", init::linear_weight(d, d, rng, 0.5));
    ps.add(p + "ln1.g", init::ones({d}));
    ps.add(p + "ln1.b", init::zeros({d}));
    ps.add(p + "w1", init::linear_weight(d, 2 * f, rng));
    ps.add(p + "w2", init::linear_weight(f, d, rng, 0.5));
    ps.add(p + "ln2.g", init::ones({d}));
    ps.add(p + "ln2.b", init::zeros({d}));
  }
  ps.add("mem.out", init::zeros({d, d}));
}

/// Entry-granular block-causal mask for `entries` blocks of `n` tokens.
inline Tensor block_causal_mask(std::size_t entries, std::size_t n) {
  const std::size_t total = entries * n;
  std::vector<Tensor> rows;
  for (std::size_t e = 0; e < entries; ++e) {
    std::vector<double> block(n * total, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < (e + 1) * n; ++j) block[i * total + j] = 1.0;
    rows.push_back(Tensor::from_vector({n, total}, std::move(block)));
  }
  return concat(rows, 0);
}

/// Transformed tokens of the whole sequence [(q+1)*n_q, d] (queue entries then h_t).
inline Tensor memory_sequence(const std::vector<Tensor>& entries, const Tensor& h, const ParamStore& ps,
                              const MemoryConfig& cfg) {
  if (entries.size() > cfg.capacity) throw ContractError("memory: more entries than capacity");
  trace::Provenance tag("memory");
  const std::size_t q = entries.size(), n = cfg.n_q, d = cfg.d;
  std::vector<Tensor> seq = entries;
  seq.push_back(h);
  for (const auto& e : seq) {
    if (e.shape() != Shape{n, d}) throw ShapeError("memory: entry shape " + shape_str(e.shape()));
  }
  Tensor x = concat(seq, 0);
  // Age embedding: 0 for h_t, 1 for the newest stored entry, and so on.
  auto ages = split(ps["mem.age"], 0, std::vector<std::size_t>(cfg.capacity + 1, 1));
  std::vector<Tensor> emb_rows;
  std::vector<double> positions;
  for (std::size_t i = 0; i <= q; ++i) {
    for (std::size_t r = 0; r < n; ++r) {
      emb_rows.push_back(ages[q - i]);
      positions.push_back(double(i));
    }
  }
  x = add(x, concat(emb_rows, 0));
  Tensor mask = block_causal_mask(q + 1, n);
  Tensor table = sinusoidal_table(Tensor::from_vector({positions.size()}, positions), d, cfg.rope_base, 1.0);
  const double scale = 1.0 / std::sqrt(double(d / cfg.n_heads));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "mem.l" + std::to_string(l) + ".";
    Tensor qh = rope_apply(matmul(x, ps[p + "wq"]), table);
    Tensor kh = rope_apply(matmul(x, ps[p + "wk"]), table);
    Tensor vh = matmul(x, ps[p + "wv"]);
    Tensor a = matmul(attention(qh, kh, vh, mask, {cfg.n_heads, scale}), ps[p + "wo"]);
    x = layernorm(add(x, a), ps[p + "ln1.g"], ps[p + "ln1.b"], cfg.eps);
    Tensor f = matmul(swiglu(matmul(x, ps[p + "w1"])), ps[p + "w2"]);
    x = layernorm(add(x, f), ps[p + "ln2.g"], ps[p + "ln2.b"], cfg.eps);
  }
  return x;
}

/// m_t: the transformed tokens at h_t's positions, through the output projection.
inline Tensor memory_forward(const std::vector<Tensor>& entries, const Tensor& h, const ParamStore& ps,
                             const MemoryConfig& cfg) {
  Tensor x = memory_sequence(entries, h, ps, cfg);
  const std::size_t q = entries.size(), n = cfg.n_q;
  Tensor cur = q == 0 ? x : split(x, 0, {q * n, n})[1];
  return matmul(cur, ps["mem.out"]);
}

inline Tensor memory_forward(const MemoryQueue& queue, const Tensor& h, const ParamStore& ps,
                             const MemoryConfig& cfg) {
  return memory_forward(queue.features(), h, ps, cfg);
}

}  // namespace rldx::memory
