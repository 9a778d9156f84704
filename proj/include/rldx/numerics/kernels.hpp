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

// Raw forward kernels over contiguous buffers. The autograd ops run them
// in double precision; the graph executor instantiates them for float too,
// so fused and unfused graph paths share exactly one implementation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "rldx/error.hpp"

namespace rldx::kernels {

/// out[m,n] = a[m,k] * b[k,n]
template <typename T>
void matmul(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(out, out + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

/// Elementwise op with b repeated over a (b is a trailing block of a, or a scalar).
template <typename T>
void binary(BinaryKind kind, const T* a, std::size_t na, const T* b, std::size_t nb, T* out) {
  switch (kind) {
    case BinaryKind::kAdd:
      for (std::size_t i = 0; i < na; ++i) out[i] = a[i] + b[i % nb];
      break;
    case BinaryKind::kSub:
      for (std::size_t i = 0; i < na; ++i) out[i] = a[i] - b[i % nb];
      break;
    case BinaryKind::kMul:
      for (std::size_t i = 0; i < na; ++i) out[i] = a[i] * b[i % nb];
      break;
  }
}

/// Per-row x / sqrt(mean(x^2) + eps) * gain. Writes the inverse rms per row when asked.
template <typename T>
void rmsnorm(const T* x, const T* gain, T* out, std::size_t rows, std::size_t d, double eps,
             T* inv_rms = nullptr) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
    const T inv = T(1) / std::sqrt(ss / T(d) + T(eps));
    if (inv_rms) inv_rms[r] = inv;
    T* o = out + r * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = xr[j] * inv * gain[j];
  }
}

template <typename T>
void layernorm(const T* x, const T* gain, const T* bias, T* out, std::size_t rows, std::size_t d,
               double eps, T* inv_std = nullptr) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + T(eps));
    if (inv_std) inv_std[r] = inv;
    T* o = out + r * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = (xr[j] - mean) * inv * gain[j] + bias[j];
  }
}

/// Softmax over the middle index of an (outer, len, inner) view.
/// -inf entries map to 0; a lane that is entirely -inf is an error.
template <typename T>
void softmax(const T* x, T* out, std::size_t outer, std::size_t len, std::size_t inner) {
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[base + i * inner]);
      if (mx == -std::numeric_limits<T>::infinity()) {
        throw ContractError("softmax: every entry along the axis is -inf");
      }
      T sum = 0;
      for (std::size_t i = 0; i < len; ++i) {
        const T v = x[base + i * inner];
        const T e = (v == -std::numeric_limits<T>::infinity()) ? T(0) : std::exp(v - mx);
        out[base + i * inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= sum;
    }
  }
}

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

/// z rows are [gate | value]; out = silu(gate) * value.
template <typename T>
void swiglu(const T* z, T* out, std::size_t rows, std::size_t h) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* g = z + r * 2 * h;
    const T* v = g + h;
    T* o = out + r * h;
    for (std::size_t j = 0; j < h; ++j) o[j] = g[j] * sigmoid(g[j]) * v[j];
  }
}

/// Interleaved sinusoid table: out[i, 2j] = sin(scale*v_i*w_j), out[i, 2j+1] = cos(...),
/// with w_j = base^(-2j/d). Doubles as the RoPE angle table.
template <typename T>
void sinembed(const T* values, std::size_t n, std::size_t d, double base, double scale, T* out) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d / 2; ++j) {
      const double w = std::pow(base, -2.0 * double(j) / double(d));
      const double ang = scale * double(values[i]) * w;
      out[i * d + 2 * j] = T(std::sin(ang));
      out[i * d + 2 * j + 1] = T(std::cos(ang));
    }
  }
}

/// Rotates adjacent pairs (x[2j], x[2j+1]) by the angle encoded in table rows.
template <typename T>
void rope(const T* x, const T* table, T* out, std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d / 2; ++j) {
      const T s = table[r * d + 2 * j];
      const T c = table[r * d + 2 * j + 1];
      const T x0 = x[r * d + 2 * j];
      const T x1 = x[r * d + 2 * j + 1];
      out[r * d + 2 * j] = x0 * c - x1 * s;
      out[r * d + 2 * j + 1] = x0 * s + x1 * c;
    }
  }
}

/// Layout of q/k/v for attention: either [tokens, heads*dh] or [heads, tokens, dh].
struct HeadLayout {
  std::size_t heads = 1;
  std::size_t dh = 1;
  bool head_major = false;

  std::size_t offset(std::size_t h, std::size_t t, std::size_t tokens) const {
    return head_major ? (h * tokens + t) * dh : t * heads * dh + h * dh;
  }
};

/// Masked multi-head attention.
///
/// Weight of key j for query i is mask[i,j] * key_scale[j] * exp(scale * q_i.k_j),
/// normalized per row. A boolean mask is the special case of 0/1 entries.
/// `probs`, when given, receives heads*tq*tk normalized weights.
template <typename T>
void attention(const T* q, const T* k, const T* v, const T* mask, const T* key_scale, T* out,
               std::size_t tq, std::size_t tk, HeadLayout layout, double scale,
               T* probs = nullptr) {
  std::vector<T> logits(tk);
  std::vector<T> w(tk);
  for (std::size_t h = 0; h < layout.heads; ++h) {
    for (std::size_t i = 0; i < tq; ++i) {
      const T* qi = q + layout.offset(h, i, tq);
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < tk; ++j) {
        const T m = mask ? mask[i * tk + j] : T(1);
        if (m <= T(0)) {
          logits[j] = -std::numeric_limits<T>::infinity();
          continue;
        }
        const T* kj = k + layout.offset(h, j, tk);
        T dot = 0;
        for (std::size_t c = 0; c < layout.dh; ++c) dot += qi[c] * kj[c];
        logits[j] = T(scale) * dot;
        mx = std::max(mx, logits[j]);
      }
      if (mx == -std::numeric_limits<T>::infinity()) {
        throw ContractError("attention: query row " + std::to_string(i) + " admits no key");
      }
      T sum = 0;
      for (std::size_t j = 0; j < tk; ++j) {
        if (logits[j] == -std::numeric_limits<T>::infinity()) {
          w[j] = 0;
          continue;
        }
        const T m = (mask ? mask[i * tk + j] : T(1)) * (key_scale ? key_scale[j] : T(1));
        w[j] = m * std::exp(logits[j] - mx);
        sum += w[j];
      }
      if (!(sum > T(0))) {
        throw NumericError("attention: query row " + std::to_string(i) + " has zero total weight");
      }
      T* oi = out + layout.offset(h, i, tq);
      std::fill(oi, oi + layout.dh, T(0));
      for (std::size_t j = 0; j < tk; ++j) {
        w[j] /= sum;
        if (probs) probs[(h * tq + i) * tk + j] = w[j];
        if (w[j] == T(0)) continue;
        const T* vj = v + layout.offset(h, j, tk);
        for (std::size_t c = 0; c < layout.dh; ++c) oi[c] += w[j] * vj[c];
      }
    }
  }
}

/// Space-time self-similarity over a 1-D patch axis.
///
/// x is [frames, positions, d]; out is [frames, positions, frames*(2U+1)] where
/// out[f, p, f2*(2U+1) + delta] = cos(x[f,p], x[f2, p+delta-U]). Out-of-range
/// neighbours and zero-norm vectors give 0.
template <typename T>
void stss(const T* x, T* out, std::size_t frames, std::size_t positions, std::size_t d,
          std::size_t radius) {
  const std::size_t width = 2 * radius + 1;
  std::vector<T> norms(frames * positions);
  for (std::size_t i = 0; i < frames * positions; ++i) {
    T ss = 0;
    for (std::size_t c = 0; c < d; ++c) ss += x[i * d + c] * x[i * d + c];
    norms[i] = std::sqrt(ss);
  }
  const std::size_t out_w = frames * width;
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t p = 0; p < positions; ++p) {
      const std::size_t a = f * positions + p;
      T* o = out + a * out_w;
      for (std::size_t f2 = 0; f2 < frames; ++f2) {
        for (std::size_t delta = 0; delta < width; ++delta) {
          const long p2 = long(p) + long(delta) - long(radius);
          T val = 0;
          if (p2 >= 0 && p2 < long(positions)) {
            const std::size_t b = f2 * positions + std::size_t(p2);
            if (norms[a] > T(0) && norms[b] > T(0)) {
              T dot = 0;
              for (std::size_t c = 0; c < d; ++c) dot += x[a * d + c] * x[b * d + c];
              val = dot / (norms[a] * norms[b]);
            }
          }
          o[f2 * width + delta] = val;
        }
      }
    }
  }
}

}  // namespace rldx::kernels
