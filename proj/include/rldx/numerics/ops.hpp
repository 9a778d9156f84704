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

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "rldx/numerics/kernels.hpp"
#include "rldx/numerics/tensor.hpp"
#include "rldx/numerics/trace.hpp"

namespace rldx {

namespace detail {

/// Grad buffer of `p` if it participates in autograd, else nullptr.
inline std::vector<double>* grad_of(TensorImpl* p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return &p->grad;
}

/// Attaches parents and a backward closure to `out` when recording is on.
/// `make` receives the output impl and returns the closure.
template <typename Make>
Tensor attach(Tensor out, const std::vector<Tensor>& parents, Make&& make) {
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  TensorImpl* self = out.impl().get();
  self->requires_grad = true;
  self->is_leaf = false;
  for (const auto& p : parents) self->parents.push_back(p.impl());
  self->backward = make(self);
  return out;
}

/// True when b can be repeated over a under the trailing-dimension rule.
inline bool broadcastable(const Shape& a, const Shape& b) {
  if (a == b) return true;
  if (numel_of(b) == 1) return true;
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor ew_binary(kernels::BinaryKind kind, const Tensor& a, const Tensor& b) {
  if (!detail::broadcastable(a.shape(), b.shape())) {
    throw ShapeError("cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
  }
  const std::size_t na = a.numel(), nb = b.numel();
  std::vector<double> out(na);
  kernels::binary(kind, a.data().data(), na, b.data().data(), nb, out.data());
  Tensor res = Tensor::from_vector(a.shape(), std::move(out));
  static const char* names[] = {"add", "sub", "mul"};
  trace::record(names[static_cast<int>(kind)], {a, b}, {res});
  return detail::attach(res, {a, b}, [kind, na, nb](detail::TensorImpl* self) {
    auto* pa = self->parents[0].get();
    auto* pb = self->parents[1].get();
    return [self, pa, pb, kind, na, nb]() {
      const auto& g = self->grad;
      if (auto* ga = detail::grad_of(pa)) {
        if (kind == kernels::BinaryKind::kMul) {
          for (std::size_t i = 0; i < na; ++i) (*ga)[i] += g[i] * pb->data[i % nb];
        } else {
          for (std::size_t i = 0; i < na; ++i) (*ga)[i] += g[i];
        }
      }
      if (auto* gb = detail::grad_of(pb)) {
        switch (kind) {
          case kernels::BinaryKind::kAdd:
            for (std::size_t i = 0; i < na; ++i) (*gb)[i % nb] += g[i];
            break;
          case kernels::BinaryKind::kSub:
            for (std::size_t i = 0; i < na; ++i) (*gb)[i % nb] -= g[i];
            break;
          case kernels::BinaryKind::kMul:
            for (std::size_t i = 0; i < na; ++i) (*gb)[i % nb] += g[i] * pa->data[i];
            break;
        }
      }
    };
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return ew_binary(kernels::BinaryKind::kAdd, a, b);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return ew_binary(kernels::BinaryKind::kSub, a, b);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return ew_binary(kernels::BinaryKind::kMul, a, b);
}
inline Tensor scale(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

// ---------------------------------------------------------------- matmul

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor res = Tensor::from_vector({m, n}, std::move(out));
  trace::record("matmul", {a, b}, {res});
  return detail::attach(res, {a, b}, [m, k, n](detail::TensorImpl* self) {
    auto* pa = self->parents[0].get();
    auto* pb = self->parents[1].get();
    return [self, pa, pb, m, k, n]() {
      const auto& g = self->grad;
      if (auto* ga = detail::grad_of(pa)) {
        // dA = G * B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0;
            const double* brow = pb->data.data() + p * n;
            const double* grow = g.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            (*ga)[i * k + p] += s;
          }
        }
      }
      if (auto* gb = detail::grad_of(pb)) {
        // dB = A^T * G
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double av = pa->data[i * k + p];
            if (av == 0.0) continue;
            double* dst = gb->data() + p * n;
            for (std::size_t j = 0; j < n; ++j) dst[j] += av * grow[j];
          }
        }
      }
    };
  });
}

/// x W + b for x [rows, in], W [in, out], b [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

// ---------------------------------------------------------------- softmax

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  std::vector<double> out(x.numel());
  kernels::softmax(x.data().data(), out.data(), outer, len, inner);
  Tensor res = Tensor::from_vector(x.shape(), std::move(out));
  trace::record("softmax", {x}, {res}, {{"axis", double(axis)}});
  return detail::attach(res, {x}, [outer, len, inner](detail::TensorImpl* self) {
    auto* px = self->parents[0].get();
    return [self, px, outer, len, inner]() {
      auto* gx = detail::grad_of(px);
      if (!gx) return;
      const auto& y = self->data;
      const auto& g = self->grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0;
          for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t idx = base + i * inner;
            (*gx)[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    };
  });
}

// ---------------------------------------------------------------- norms

inline Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d) throw ShapeError("rmsnorm: gain does not match last dim");
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel()), inv(rows);
  kernels::rmsnorm(x.data().data(), gain.data().data(), out.data(), rows, d, eps, inv.data());
  Tensor res = Tensor::from_vector(x.shape(), std::move(out));
  trace::record("rmsnorm", {x, gain}, {res}, {{"eps", eps}});
  return detail::attach(res, {x, gain}, [rows, d, inv = std::move(inv)](detail::TensorImpl* self) {
    auto* px = self->parents[0].get();
    auto* pg = self->parents[1].get();
    return [self, px, pg, rows, d, inv]() {
      const auto& g = self->grad;
      auto* gx = detail::grad_of(px);
      auto* gg = detail::grad_of(pg);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = px->data.data() + r * d;
        const double* gr = g.data() + r * d;
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const double n = xr[j] * inv[r];
          if (gg) (*gg)[j] += gr[j] * n;
          dot += gr[j] * pg->data[j] * n;
        }
        if (gx) {
          for (std::size_t j = 0; j < d; ++j) {
            const double n = xr[j] * inv[r];
            (*gx)[r * d + j] += inv[r] * (gr[j] * pg->data[j] - n * dot / double(d));
          }
        }
      }
    };
  });
}

inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layernorm: gain/bias do not match last dim");
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel()), inv(rows);
  kernels::layernorm(x.data().data(), gain.data().data(), bias.data().data(), out.data(), rows, d,
                     eps, inv.data());
  Tensor res = Tensor::from_vector(x.shape(), std::move(out));
  trace::record("layernorm", {x, gain, bias}, {res}, {{"eps", eps}});
  return detail::attach(res, {x, gain, bias}, [rows, d, inv = std::move(inv)](detail::TensorImpl* self) {
    auto* px = self->parents[0].get();
    auto* pg = self->parents[1].get();
    auto* pb = self->parents[2].get();
    return [self, px, pg, pb, rows, d, inv]() {
      const auto& g = self->grad;
      auto* gx = detail::grad_of(px);
      auto* gg = detail::grad_of(pg);
      auto* gb = detail::grad_of(pb);
      std::vector<double> n(d), dn(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = px->data.data() + r * d;
        const double* gr = g.data() + r * d;
        double mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= double(d);
        double mdn = 0, mdnn = 0;
        for (std::size_t j = 0; j < d; ++j) {
          n[j] = (xr[j] - mean) * inv[r];
          dn[j] = gr[j] * pg->data[j];
          if (gg) (*gg)[j] += gr[j] * n[j];
          if (gb) (*gb)[j] += gr[j];
          mdn += dn[j];
          mdnn += dn[j] * n[j];
        }
        mdn /= double(d);
        mdnn /= double(d);
        if (gx) {
          for (std::size_t j = 0; j < d; ++j) {
            (*gx)[r * d + j] += inv[r] * (dn[j] - mdn - n[j] * mdnn);
          }
        }
      }
    };
  });
}

// ---------------------------------------------------------------- activations

inline Tensor swiglu(const Tensor& z) {
  const std::size_t two_h = z.shape().back();
  if (two_h % 2 != 0) throw ShapeError("swiglu: last dim must be even");
  const std::size_t h = two_h / 2;
  const std::size_t rows = z.numel() / two_h;
  Shape shape = z.shape();
  shape.back() = h;
  std::vector<double> out(rows * h);
  kernels::swiglu(z.data().data(), out.data(), rows, h);
  Tensor res = Tensor::from_vector(shape, std::move(out));
  trace::record("swiglu", {z}, {res});
  return detail::attach(res, {z}, [rows, h](detail::TensorImpl* self) {
    auto* pz = self->parents[0].get();
    return [self, pz, rows, h]() {
      auto* gz = detail::grad_of(pz);
      if (!gz) return;
      const auto& g = self->grad;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < h; ++j) {
          const double gate = pz->data[r * 2 * h + j];
          const double val = pz->data[r * 2 * h + h + j];
          const double s = kernels::sigmoid(gate);
          const double up = g[r * h + j];
          (*gz)[r * 2 * h + j] += up * val * (s + gate * s * (1.0 - s));
          (*gz)[r * 2 * h + h + j] += up * gate * s;
        }
      }
    };
  });
}

// ---------------------------------------------------------------- positional

/// Interleaved sin/cos table for each entry of `values` (shape [n]) -> [n, d].
inline Tensor sinusoidal_table(const Tensor& values, std::size_t d, double base, double scale) {
  if (d % 2 != 0) throw ShapeError("sinusoidal embedding needs an even dim");
  const std::size_t n = values.numel();
  std::vector<double> out(n * d);
  kernels::sinembed(values.data().data(), n, d, base, scale, out.data());
  Tensor res = Tensor::from_vector({n, d}, std::move(out));
  trace::record("sinembed", {values}, {res}, {{"d", double(d)}, {"base", base}, {"scale", scale}});
  return detail::attach(res, {values}, [n, d, base, scale](detail::TensorImpl* self) {
    auto* pv = self->parents[0].get();
    return [self, pv, n, d, base, scale]() {
      auto* gv = detail::grad_of(pv);
      if (!gv) return;
      const auto& g = self->grad;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d / 2; ++j) {
          const double w = std::pow(base, -2.0 * double(j) / double(d));
          const double s = self->data[i * d + 2 * j];
          const double c = self->data[i * d + 2 * j + 1];
          (*gv)[i] += scale * w * (g[i * d + 2 * j] * c - g[i * d + 2 * j + 1] * s);
        }
      }
    };
  });
}

/// Timestep embedding of a scalar t (shape [1]) -> [1, d].
inline Tensor sinusoidal_embed(const Tensor& t, std::size_t d, double scale = 1.0) {
  return sinusoidal_table(t, d, 10000.0, scale);
}

/// Applies a rotation table produced by sinusoidal_table to x [rows, d].
inline Tensor rope_apply(const Tensor& x, const Tensor& table) {
  const std::size_t d = x.shape().back();
  if (d % 2 != 0) throw ShapeError("rope: last dim must be even");
  if (table.shape() != Shape{x.numel() / d, d}) {
    throw ShapeError("rope: table " + shape_str(table.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  kernels::rope(x.data().data(), table.data().data(), out.data(), rows, d);
  Tensor res = Tensor::from_vector(x.shape(), std::move(out));
  trace::record("rope", {x, table}, {res});
  return detail::attach(res, {x, table}, [rows, d](detail::TensorImpl* self) {
    auto* px = self->parents[0].get();
    auto* pt = self->parents[1].get();
    return [self, px, pt, rows, d]() {
      const auto& g = self->grad;
      auto* gx = detail::grad_of(px);
      auto* gt = detail::grad_of(pt);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d / 2; ++j) {
          const std::size_t i0 = r * d + 2 * j, i1 = i0 + 1;
          const double s = pt->data[i0], c = pt->data[i1];
          if (gx) {
            (*gx)[i0] += g[i0] * c + g[i1] * s;
            (*gx)[i1] += -g[i0] * s + g[i1] * c;
          }
          if (gt) {
            const double x0 = px->data[i0], x1 = px->data[i1];
            (*gt)[i0] += -g[i0] * x1 + g[i1] * x0;
            (*gt)[i1] += g[i0] * x0 + g[i1] * x1;
          }
        }
      }
    };
  });
}

/// Rotary embedding with adjacent pairs (2i, 2i+1) rotated by pos * base^(-2i/d).
inline Tensor rope(const Tensor& x, const std::vector<double>& positions, double base) {
  const std::size_t d = x.shape().back();
  if (d % 2 != 0) throw ShapeError("rope: last dim must be even");
  if (positions.size() != x.numel() / d) throw ShapeError("rope: one position per row required");
  Tensor pos = Tensor::from_vector({positions.size()}, positions);
  return rope_apply(x, sinusoidal_table(pos, d, base, 1.0));
}

// ---------------------------------------------------------------- attention

struct AttentionOptions {
  std::size_t heads = 1;
  double scale = 1.0;
};

/// Multi-head attention. q [tq, heads*dh] (or [heads, tq, dh]), k/v likewise with tk rows.
/// `mask` [tq, tk] holds 0/1 (or non-negative weights); `key_scale` [tk] multiplies
/// each key's weight. Either may be undefined.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask,
                        const Tensor& key_scale, AttentionOptions opt) {
  kernels::HeadLayout layout;
  std::size_t tq = 0, tk = 0;
  if (q.rank() == 3) {
    if (k.rank() != 3 || v.rank() != 3 || k.dim(0) != q.dim(0) || v.dim(0) != q.dim(0) ||
        k.dim(2) != q.dim(2) || v.dim(2) != q.dim(2) || k.dim(1) != v.dim(1)) {
      throw ShapeError("attention: mismatched q/k/v " + shape_str(q.shape()) + " " +
                       shape_str(k.shape()) + " " + shape_str(v.shape()));
    }
    layout = {q.dim(0), q.dim(2), true};
    tq = q.dim(1);
    tk = k.dim(1);
  } else {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.dim(1) != q.dim(1) ||
        v.dim(1) != q.dim(1) || k.dim(0) != v.dim(0) || q.dim(1) % opt.heads != 0) {
      throw ShapeError("attention: mismatched q/k/v " + shape_str(q.shape()) + " " +
                       shape_str(k.shape()) + " " + shape_str(v.shape()));
    }
    layout = {opt.heads, q.dim(1) / opt.heads, false};
    tq = q.dim(0);
    tk = k.dim(0);
  }
  if (mask.defined() && mask.shape() != Shape{tq, tk}) {
    throw ShapeError("attention: mask " + shape_str(mask.shape()) + " expected [" +
                     std::to_string(tq) + "," + std::to_string(tk) + "]");
  }
  if (key_scale.defined() && key_scale.numel() != tk) {
    throw ShapeError("attention: key_scale length mismatch");
  }
  std::vector<double> out(q.numel());
  std::vector<double> probs(layout.heads * tq * tk);
  const double* mptr = mask.defined() ? mask.data().data() : nullptr;
  const double* kptr = key_scale.defined() ? key_scale.data().data() : nullptr;
  kernels::attention(q.data().data(), k.data().data(), v.data().data(), mptr, kptr, out.data(), tq,
                     tk, layout, opt.scale, probs.data());
  Tensor res = Tensor::from_vector(q.shape(), std::move(out));
  std::vector<Tensor> inputs{q, k, v};
  if (mask.defined()) inputs.push_back(mask);
  if (key_scale.defined()) inputs.push_back(key_scale);
  trace::record("attention", inputs, {res},
                {{"heads", double(layout.heads)},
                 {"scale", opt.scale},
                 {"has_mask", mask.defined() ? 1.0 : 0.0},
                 {"has_key_scale", key_scale.defined() ? 1.0 : 0.0}});
  const bool has_mask = mask.defined();
  const bool has_ks = key_scale.defined();
  return detail::attach(res, inputs, [=, probs = std::move(probs)](detail::TensorImpl* self) {
    auto* pq = self->parents[0].get();
    auto* pk = self->parents[1].get();
    auto* pv = self->parents[2].get();
    detail::TensorImpl* pm = has_mask ? self->parents[3].get() : nullptr;
    detail::TensorImpl* pks = has_ks ? self->parents[has_mask ? 4 : 3].get() : nullptr;
    return [=]() {
      const auto& g = self->grad;
      auto* gq = detail::grad_of(pq);
      auto* gk = detail::grad_of(pk);
      auto* gv = detail::grad_of(pv);
      auto* gks = pks ? detail::grad_of(pks) : nullptr;
      auto* gm = pm ? detail::grad_of(pm) : nullptr;
      const std::size_t dh = layout.dh;
      std::vector<double> dp(tk), dl(tk), a(tk);
      for (std::size_t h = 0; h < layout.heads; ++h) {
        for (std::size_t i = 0; i < tq; ++i) {
          const double* P = probs.data() + (h * tq + i) * tk;
          const double* gi = g.data() + layout.offset(h, i, tq);
          const double* qi = pq->data.data() + layout.offset(h, i, tq);
          double sum_pdp = 0;
          for (std::size_t j = 0; j < tk; ++j) {
            const double* vj = pv->data.data() + layout.offset(h, j, tk);
            double s = 0;
            for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
            dp[j] = s;
            sum_pdp += P[j] * s;
            if (gv && P[j] != 0.0) {
              double* dst = gv->data() + layout.offset(h, j, tk);
              for (std::size_t c = 0; c < dh; ++c) dst[c] += P[j] * gi[c];
            }
          }
          for (std::size_t j = 0; j < tk; ++j) dl[j] = P[j] * (dp[j] - sum_pdp);
          for (std::size_t j = 0; j < tk; ++j) {
            if (dl[j] == 0.0) continue;
            const double* kj = pk->data.data() + layout.offset(h, j, tk);
            if (gq) {
              double* dst = gq->data() + layout.offset(h, i, tq);
              for (std::size_t c = 0; c < dh; ++c) dst[c] += opt.scale * dl[j] * kj[c];
            }
            if (gk) {
              double* dst = gk->data() + layout.offset(h, j, tk);
              for (std::size_t c = 0; c < dh; ++c) dst[c] += opt.scale * dl[j] * qi[c];
            }
          }
          if (gks || gm) {
            // P_ij = m_ij ks_j e_ij / Z with e_ij = exp(l_ij - mx), so
            // dL/dks_j = m_ij e_ij / Z (dp_j - sum) and dL/dm_ij = ks_j e_ij / Z (dp_j - sum).
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < tk; ++j) {
              const double m = pm ? pm->data[i * tk + j] : 1.0;
              if (m <= 0) continue;
              const double* kj = pk->data.data() + layout.offset(h, j, tk);
              double dot = 0;
              for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
              a[j] = opt.scale * dot;
              mx = std::max(mx, a[j]);
            }
            double z = 0;
            for (std::size_t j = 0; j < tk; ++j) {
              const double m = pm ? pm->data[i * tk + j] : 1.0;
              if (m <= 0) continue;
              a[j] = std::exp(a[j] - mx);
              z += m * (pks ? pks->data[j] : 1.0) * a[j];
            }
            for (std::size_t j = 0; j < tk; ++j) {
              const double m = pm ? pm->data[i * tk + j] : 1.0;
              if (m <= 0) continue;
              const double base = a[j] / z * (dp[j] - sum_pdp);
              if (gks) (*gks)[j] += m * base;
              if (gm) (*gm)[i * tk + j] += (pks ? pks->data[j] : 1.0) * base;
            }
          }
        }
      }
    };
  });
}

inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask,
                        AttentionOptions opt) {
  return attention(q, k, v, mask, Tensor(), opt);
}

// ---------------------------------------------------------------- layout

/// Concatenates rank-2 tensors along axis 0 (rows) or 1 (columns), or rank-1 along 0.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (parts.size() == 1) return parts.front();
  const std::size_t rank = parts[0].rank();
  if (axis >= rank || rank > 2) throw ShapeError("concat: unsupported axis/rank");
  Shape shape = parts[0].shape();
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
      if (i != axis && p.dim(i) != parts[0].dim(i)) {
        throw ShapeError("concat: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
      }
    }
    shape[axis] += p.dim(axis);
  }
  std::vector<double> out;
  out.reserve(numel_of(shape));
  if (axis == 0) {
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  } else {
    const std::size_t rows = shape[0];
    for (std::size_t r = 0; r < rows; ++r) {
      for (const auto& p : parts) {
        auto d = p.data().subspan(r * p.dim(1), p.dim(1));
        out.insert(out.end(), d.begin(), d.end());
      }
    }
  }
  Tensor res = Tensor::from_vector(shape, std::move(out));
  trace::record("concat", parts, {res}, {{"axis", double(axis)}});
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis));
  return detail::attach(res, parts, [axis, widths, shape](detail::TensorImpl* self) {
    return [self, axis, widths, shape]() {
      const auto& g = self->grad;
      if (axis == 0) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
          auto* p = self->parents[i].get();
          const std::size_t n = p->data.size();
          if (auto* gp = detail::grad_of(p)) {
            for (std::size_t j = 0; j < n; ++j) (*gp)[j] += g[off + j];
          }
          off += n;
        }
      } else {
        const std::size_t rows = shape[0], total = shape[1];
        std::size_t col = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
          auto* p = self->parents[i].get();
          if (auto* gp = detail::grad_of(p)) {
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < widths[i]; ++c) {
                (*gp)[r * widths[i] + c] += g[r * total + col + c];
              }
            }
          }
          col += widths[i];
        }
      }
    };
  });
}

/// Splits along axis 0 or 1 into consecutive pieces of the given sizes.
inline std::vector<Tensor> split(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& sizes) {
  if (axis >= x.rank() || x.rank() > 2) throw ShapeError("split: unsupported axis/rank");
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (total != x.dim(axis)) {
    throw ShapeError("split: sizes sum to " + std::to_string(total) + ", axis has " +
                     std::to_string(x.dim(axis)));
  }
  std::vector<Tensor> outs;
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.rank() == 2 ? x.dim(1) : 1;
  std::size_t off = 0;
  for (auto s : sizes) {
    Shape shape = x.shape();
    shape[axis] = s;
    std::vector<double> out;
    out.reserve(numel_of(shape));
    if (axis == 0) {
      auto d = x.data().subspan(off * cols, s * cols);
      out.assign(d.begin(), d.end());
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        auto d = x.data().subspan(r * cols + off, s);
        out.insert(out.end(), d.begin(), d.end());
      }
    }
    Tensor piece = Tensor::from_vector(shape, std::move(out));
    piece = detail::attach(piece, {x}, [axis, off, s, rows, cols](detail::TensorImpl* self) {
      auto* px = self->parents[0].get();
      return [self, px, axis, off, s, rows, cols]() {
        auto* gx = detail::grad_of(px);
        if (!gx) return;
        const auto& g = self->grad;
        if (axis == 0) {
          for (std::size_t j = 0; j < s * cols; ++j) (*gx)[off * cols + j] += g[j];
        } else {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < s; ++c) (*gx)[r * cols + off + c] += g[r * s + c];
          }
        }
      };
    });
    outs.push_back(piece);
    off += s;
  }
  trace::Attrs attrs{{"axis", double(axis)}};
  trace::record("split", {x}, outs, attrs);
  return outs;
}

/// Rows [begin, end) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> sizes;
  if (begin > 0) sizes.push_back(begin);
  sizes.push_back(end - begin);
  if (end < x.dim(0)) sizes.push_back(x.dim(0) - end);
  if (sizes.size() == 1) return x;
  auto parts = split(x, 0, sizes);
  return parts[begin > 0 ? 1 : 0];
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor res = Tensor::from_vector(shape, x.values());
  trace::record("reshape", {x}, {res});
  return detail::attach(res, {x}, [](detail::TensorImpl* self) {
    auto* px = self->parents[0].get();
    return [self, px]() {
      auto* gx = detail::grad_of(px);
      if (!gx) return;
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self->grad[i];
    };
  });
}

// ---------------------------------------------------------------- stss

/// Space-time self-similarity of x [frames, positions, d] within radius U.
inline Tensor stss(const Tensor& x, std::size_t radius) {
  if (x.rank() != 3) throw ShapeError("stss: expects [frames, positions, d]");
  const std::size_t F = x.dim(0), P = x.dim(1), d = x.dim(2);
  const std::size_t width = 2 * radius + 1;
  std::vector<double> out(F * P * F * width);
  kernels::stss(x.data().data(), out.data(), F, P, d, radius);
  Tensor res = Tensor::from_vector({F, P, F * width}, std::move(out));
  trace::record("stss", {x}, {res}, {{"radius", double(radius)}});
  return detail::attach(res, {x}, [F, P, d, radius, width](detail::TensorImpl* self) {
    auto* px = self->parents[0].get();
    return [self, px, F, P, d, radius, width]() {
      auto* gx = detail::grad_of(px);
      if (!gx) return;
      const auto& x = px->data;
      const auto& y = self->data;
      const auto& g = self->grad;
      std::vector<double> norms(F * P);
      for (std::size_t i = 0; i < F * P; ++i) {
        double ss = 0;
        for (std::size_t c = 0; c < d; ++c) ss += x[i * d + c] * x[i * d + c];
        norms[i] = std::sqrt(ss);
      }
      const std::size_t out_w = F * width;
      for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t p = 0; p < P; ++p) {
          const std::size_t a = f * P + p;
          for (std::size_t f2 = 0; f2 < F; ++f2) {
            for (std::size_t delta = 0; delta < width; ++delta) {
              const long p2 = long(p) + long(delta) - long(radius);
              if (p2 < 0 || p2 >= long(P)) continue;
              const std::size_t b = f2 * P + std::size_t(p2);
              if (norms[a] <= 0 || norms[b] <= 0) continue;
              const double up = g[a * out_w + f2 * width + delta];
              if (up == 0.0) continue;
              const double cs = y[a * out_w + f2 * width + delta];
              const double nab = norms[a] * norms[b];
              for (std::size_t c = 0; c < d; ++c) {
                (*gx)[a * d + c] += up * (x[b * d + c] / nab - cs * x[a * d + c] / (norms[a] * norms[a]));
                (*gx)[b * d + c] += up * (x[a * d + c] / nab - cs * x[b * d + c] / (norms[b] * norms[b]));
              }
            }
          }
        }
      }
    };
  });
}

// ---------------------------------------------------------------- reductions (training only)

inline Tensor sum(const Tensor& x) {
  trace::reject("sum");
  double s = 0;
  for (double v : x.data()) s += v;
  Tensor res = Tensor::scalar(s);
  return detail::attach(res, {x}, [](detail::TensorImpl* self) {
    auto* px = self->parents[0].get();
    return [self, px]() {
      auto* gx = detail::grad_of(px);
      if (!gx) return;
      for (auto& v : *gx) v += self->grad[0];
    };
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / double(x.numel())); }

/// Row-wise log-softmax over the last dim.
inline Tensor log_softmax(const Tensor& x) {
  trace::reject("log_softmax");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += std::exp(xr[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] - lse;
  }
  Tensor res = Tensor::from_vector(x.shape(), std::move(out));
  return detail::attach(res, {x}, [rows, d](detail::TensorImpl* self) {
    auto* px = self->parents[0].get();
    return [self, px, rows, d]() {
      auto* gx = detail::grad_of(px);
      if (!gx) return;
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0;
        for (std::size_t j = 0; j < d; ++j) gs += self->grad[r * d + j];
        for (std::size_t j = 0; j < d; ++j) {
          (*gx)[r * d + j] += self->grad[r * d + j] - std::exp(self->data[r * d + j]) * gs;
        }
      }
    };
  });
}

/// Mean over rows of a rank-2 tensor -> [1, cols]. Traced as a matmul with a constant row.
inline Tensor mean_rows(const Tensor& x) {
  const std::size_t rows = x.dim(0);
  Tensor w = Tensor::full({1, rows}, 1.0 / double(rows));
  return matmul(w, x);
}

}  // namespace rldx
