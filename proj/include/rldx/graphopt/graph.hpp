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

// Static operator graphs: capture from traced primitive calls, replay in
// 32- or 64-bit arithmetic.

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "rldx/error.hpp"
#include "rldx/numerics/kernels.hpp"
#include "rldx/numerics/tensor.hpp"
#include "rldx/numerics/trace.hpp"

namespace rldx::graphopt {

using Attrs = trace::Attrs;

/// Output `port` of node `node`.
struct Ref {
  int node = -1;
  int port = 0;
  bool operator==(const Ref&) const = default;
  auto operator<=>(const Ref&) const = default;
};

struct OpNode {
  int id = 0;
  std::string kind;
  std::vector<Ref> inputs;
  Attrs attrs;
  std::vector<Shape> shapes;  // one per output port
  std::size_t elem_bytes = 8;
  std::string tag;            // provenance, e.g. "memory"
  std::vector<double> value;  // payload of constant nodes
};

struct OpGraph {
  std::vector<OpNode> nodes;  // topological order, nodes[i].id == i
  std::vector<int> inputs;    // ids of input nodes, in argument order
  std::vector<int> outputs;   // ids of output nodes, in result order

  const OpNode& at(int id) const { return nodes.at(std::size_t(id)); }
  const Shape& shape(Ref r) const { return at(r.node).shapes.at(std::size_t(r.port)); }
};

inline const std::set<std::string>& primitive_kinds() {
  static const std::set<std::string> k{"add",  "sub",     "mul",   "matmul",   "softmax", "rmsnorm",
                                       "layernorm", "rope", "attention", "swiglu", "sinembed", "reshape",
                                       "concat", "split", "stss"};
  return k;
}

inline const std::set<std::string>& fused_kinds() {
  static const std::set<std::string> k{"FusedVisAttn",      "FusedLLMAttn",    "FusedMemAttn",
                                       "FusedAddLayerNorm", "FusedAddRMSNorm", "FusedAdd3RMSNorm",
                                       "GroupedSwiGLU",     "FusedSwiGLU"};
  return k;
}

/// Nodes that move data through a kernel (everything except input/constant/output markers).
inline bool is_launch(const OpNode& n) {
  return n.kind != "input" && n.kind != "constant" && n.kind != "output";
}

inline double attr(const OpNode& n, const std::string& key) {
  auto it = n.attrs.find(key);
  if (it == n.attrs.end()) throw FormatError("node " + std::to_string(n.id) + " (" + n.kind + ") lacks attribute " + key);
  return it->second;
}

/// Structural checks: ids, topological order, port ranges, signature nodes.
inline void validate(const OpGraph& g) {
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const OpNode& n = g.nodes[i];
    if (n.id != int(i)) throw FormatError("graph node ids must equal their positions");
    if (n.kind != "input" && n.kind != "constant" && n.kind != "output" && !primitive_kinds().count(n.kind) &&
        !fused_kinds().count(n.kind)) {
      throw FormatError("unknown node kind " + n.kind);
    }
    if (n.shapes.empty() && n.kind != "output") throw FormatError("node " + std::to_string(i) + " has no outputs");
    for (const Ref& r : n.inputs) {
      if (r.node < 0 || r.node >= int(i)) throw FormatError("node " + std::to_string(i) + " reads a later node");
      if (r.port < 0 || std::size_t(r.port) >= g.nodes[std::size_t(r.node)].shapes.size()) {
        throw FormatError("node " + std::to_string(i) + " reads a missing port");
      }
    }
    if (n.kind == "constant" && n.value.size() != numel_of(n.shapes.at(0))) {
      throw FormatError("constant " + std::to_string(i) + " payload does not match its shape");
    }
  }
  for (int id : g.inputs) {
    if (id < 0 || id >= int(g.nodes.size()) || g.at(id).kind != "input") throw FormatError("bad graph input id");
  }
  for (int id : g.outputs) {
    if (id < 0 || id >= int(g.nodes.size()) || g.at(id).kind != "output") throw FormatError("bad graph output id");
  }
}

/// Number of consumers of every (node, port).
inline std::map<Ref, int> consumer_counts(const OpGraph& g) {
  std::map<Ref, int> c;
  for (const auto& n : g.nodes)
    for (const Ref& r : n.inputs) ++c[r];
  return c;
}

/// Sets the element width used by the traffic model.
inline OpGraph with_element_width(OpGraph g, std::size_t bytes) {
  if (bytes != 4 && bytes != 8) throw ConfigError("element width must be 4 or 8 bytes");
  for (auto& n : g.nodes) n.elem_bytes = bytes;
  return g;
}

// ---------------------------------------------------------------- evaluation

template <typename T>
using Buffer = std::vector<T>;

namespace detail {

template <typename T>
void binary_into(kernels::BinaryKind kind, const Buffer<T>& a, const Buffer<T>& b, Buffer<T>& out) {
  out.resize(a.size());
  kernels::binary(kind, a.data(), a.size(), b.data(), b.size(), out.data());
}

inline kernels::HeadLayout head_layout(const Shape& q, std::size_t heads) {
  if (q.size() == 3) return {q[0], q[2], true};
  return {heads, q[1] / heads, false};
}

template <typename T>
void attention_into(const OpNode& n, const Shape& qs, const Shape& ks, const T* q, const T* k, const T* v,
                    const T* mask, const T* key_scale, Buffer<T>& out) {
  const auto layout = head_layout(qs, std::size_t(attr(n, "heads")));
  const std::size_t tq = qs.size() == 3 ? qs[1] : qs[0];
  const std::size_t tk = ks.size() == 3 ? ks[1] : ks[0];
  out.resize(numel_of(qs));
  kernels::attention(q, k, v, mask, key_scale, out.data(), tq, tk, layout, attr(n, "scale"));
}

template <typename T>
void rmsnorm_into(const Buffer<T>& x, const Buffer<T>& gain, double eps, Buffer<T>& out) {
  const std::size_t d = gain.size();
  out.resize(x.size());
  kernels::rmsnorm(x.data(), gain.data(), out.data(), x.size() / d, d, eps);
}

template <typename T>
void rope_into(const Buffer<T>& x, const Buffer<T>& table, std::size_t d, Buffer<T>& out) {
  out.resize(x.size());
  kernels::rope(x.data(), table.data(), out.data(), x.size() / d, d);
}

template <typename T>
void swiglu_into(const Buffer<T>& z, const Shape& zs, Buffer<T>& out) {
  const std::size_t h = zs.back() / 2;
  out.resize(z.size() / 2);
  kernels::swiglu(z.data(), out.data(), z.size() / (2 * h), h);
}

}  // namespace detail

/// Evaluates one non-input node. `in[i]` and `shapes[i]` describe `n.inputs[i]`.
template <typename T>
std::vector<Buffer<T>> eval_node(const OpNode& n, const std::vector<const Buffer<T>*>& in,
                                 const std::vector<const Shape*>& shapes) {
  using kernels::BinaryKind;
  std::vector<Buffer<T>> out(n.shapes.size());
  auto ishape = [&](std::size_t i) -> const Shape& { return *shapes[i]; };
  const std::string& k = n.kind;
  if (k == "constant") {
    out[0].assign(n.value.begin(), n.value.end());
  } else if (k == "output" || k == "reshape") {
    out.resize(1);
    out[0] = *in[0];
  } else if (k == "add" || k == "sub" || k == "mul") {
    const BinaryKind bk = k == "add" ? BinaryKind::kAdd : k == "sub" ? BinaryKind::kSub : BinaryKind::kMul;
    detail::binary_into(bk, *in[0], *in[1], out[0]);
  } else if (k == "matmul") {
    const Shape& a = ishape(0);
    const Shape& b = ishape(1);
    out[0].resize(a[0] * b[1]);
    kernels::matmul(in[0]->data(), in[1]->data(), out[0].data(), a[0], a[1], b[1]);
  } else if (k == "softmax") {
    const Shape& s = ishape(0);
    const std::size_t axis = std::size_t(attr(n, "axis"));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    out[0].resize(in[0]->size());
    kernels::softmax(in[0]->data(), out[0].data(), outer, s[axis], inner);
  } else if (k == "rmsnorm") {
    detail::rmsnorm_into(*in[0], *in[1], attr(n, "eps"), out[0]);
  } else if (k == "layernorm") {
    const std::size_t d = in[1]->size();
    out[0].resize(in[0]->size());
    kernels::layernorm(in[0]->data(), in[1]->data(), in[2]->data(), out[0].data(), in[0]->size() / d, d,
                       attr(n, "eps"));
  } else if (k == "swiglu") {
    detail::swiglu_into(*in[0], ishape(0), out[0]);
  } else if (k == "sinembed") {
    const std::size_t d = std::size_t(attr(n, "d"));
    out[0].resize(in[0]->size() * d);
    kernels::sinembed(in[0]->data(), in[0]->size(), d, attr(n, "base"), attr(n, "scale"), out[0].data());
  } else if (k == "rope") {
    detail::rope_into(*in[0], *in[1], ishape(0).back(), out[0]);
  } else if (k == "attention") {
    const bool has_mask = attr(n, "has_mask") != 0, has_ks = attr(n, "has_key_scale") != 0;
    const T* mask = has_mask ? in[3]->data() : nullptr;
    const T* ks = has_ks ? in[has_mask ? 4 : 3]->data() : nullptr;
    detail::attention_into(n, ishape(0), ishape(1), in[0]->data(), in[1]->data(), in[2]->data(), mask, ks, out[0]);
  } else if (k == "concat") {
    const std::size_t axis = std::size_t(attr(n, "axis"));
    auto& o = out[0];
    o.reserve(numel_of(n.shapes[0]));
    if (axis == 0) {
      for (const auto* b : in) o.insert(o.end(), b->begin(), b->end());
    } else {
      const std::size_t rows = n.shapes[0][0];
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < in.size(); ++i) {
          const std::size_t w = ishape(i)[1];
          o.insert(o.end(), in[i]->begin() + long(r * w), in[i]->begin() + long((r + 1) * w));
        }
      }
    }
  } else if (k == "split") {
    const std::size_t axis = std::size_t(attr(n, "axis"));
    const Shape& s = ishape(0);
    const std::size_t cols = s.size() == 2 ? s[1] : 1;
    std::size_t off = 0;
    for (std::size_t p = 0; p < n.shapes.size(); ++p) {
      const std::size_t w = n.shapes[p][axis];
      auto& o = out[p];
      if (axis == 0) {
        o.assign(in[0]->begin() + long(off * cols), in[0]->begin() + long((off + w) * cols));
      } else {
        for (std::size_t r = 0; r < s[0]; ++r) {
          o.insert(o.end(), in[0]->begin() + long(r * cols + off), in[0]->begin() + long(r * cols + off + w));
        }
      }
      off += w;
    }
  } else if (k == "stss") {
    const Shape& s = ishape(0);
    const std::size_t radius = std::size_t(attr(n, "radius"));
    out[0].resize(numel_of(n.shapes[0]));
    kernels::stss(in[0]->data(), out[0].data(), s[0], s[1], s[2], radius);
  } else if (k == "FusedLLMAttn") {
    // inputs: q_x, q_gain, q_table, k_x, k_gain, k_table, v, [mask], [key_scale]
    Buffer<T> qn, q, kn, kk, tmp;
    detail::rmsnorm_into(*in[0], *in[1], attr(n, "q_eps"), qn);
    detail::rope_into(qn, *in[2], ishape(0).back(), q);
    detail::rmsnorm_into(*in[3], *in[4], attr(n, "k_eps"), kn);
    detail::rope_into(kn, *in[5], ishape(3).back(), kk);
    const bool has_mask = attr(n, "has_mask") != 0, has_ks = attr(n, "has_key_scale") != 0;
    const T* mask = has_mask ? in[7]->data() : nullptr;
    const T* ks = has_ks ? in[has_mask ? 8 : 7]->data() : nullptr;
    detail::attention_into(n, ishape(0), ishape(3), q.data(), kk.data(), in[6]->data(), mask, ks, out[0]);
  } else if (k == "FusedVisAttn" || k == "FusedMemAttn") {
    // inputs: q_x, q_table, k_x, k_table, v, [mask], [key_scale]
    Buffer<T> q, kk;
    detail::rope_into(*in[0], *in[1], ishape(0).back(), q);
    detail::rope_into(*in[2], *in[3], ishape(2).back(), kk);
    const bool has_mask = attr(n, "has_mask") != 0, has_ks = attr(n, "has_key_scale") != 0;
    const T* mask = has_mask ? in[5]->data() : nullptr;
    const T* ks = has_ks ? in[has_mask ? 6 : 5]->data() : nullptr;
    detail::attention_into(n, ishape(0), ishape(2), q.data(), kk.data(), in[4]->data(), mask, ks, out[0]);
  } else if (k == "FusedAddLayerNorm") {
    Buffer<T> s;
    detail::binary_into(BinaryKind::kAdd, *in[0], *in[1], s);
    const std::size_t d = in[2]->size();
    out[0].resize(s.size());
    kernels::layernorm(s.data(), in[2]->data(), in[3]->data(), out[0].data(), s.size() / d, d, attr(n, "eps"));
  } else if (k == "FusedAddRMSNorm") {
    Buffer<T> s;
    detail::binary_into(BinaryKind::kAdd, *in[0], *in[1], s);
    detail::rmsnorm_into(s, *in[2], attr(n, "eps"), out[0]);
  } else if (k == "FusedAdd3RMSNorm") {
    // (a + b) + c, with the inner sum on the side it was captured on.
    Buffer<T> s, s2;
    detail::binary_into(BinaryKind::kAdd, *in[0], *in[1], s);
    if (attr(n, "inner_rhs") != 0) {
      detail::binary_into(BinaryKind::kAdd, *in[2], s, s2);
    } else {
      detail::binary_into(BinaryKind::kAdd, s, *in[2], s2);
    }
    detail::rmsnorm_into(s2, *in[3], attr(n, "eps"), out[0]);
  } else if (k == "GroupedSwiGLU") {
    detail::swiglu_into(*in[0], ishape(0), out[0]);
    detail::swiglu_into(*in[1], ishape(1), out[1]);
  } else if (k == "FusedSwiGLU") {
    detail::swiglu_into(*in[0], ishape(0), out[0]);
  } else {
    throw FormatError("cannot execute node kind " + k);
  }
  return out;
}

/// Interprets the graph on the given inputs (values cast to T); returns the outputs as doubles.
template <typename T>
std::vector<std::vector<double>> execute(const OpGraph& g, const std::vector<std::vector<double>>& inputs) {
  if (inputs.size() != g.inputs.size()) {
    throw ShapeError("execute: expected " + std::to_string(g.inputs.size()) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  std::vector<std::vector<Buffer<T>>> vals(g.nodes.size());
  for (std::size_t i = 0; i < g.inputs.size(); ++i) {
    const OpNode& n = g.at(g.inputs[i]);
    if (inputs[i].size() != numel_of(n.shapes[0])) {
      throw ShapeError("execute: input " + std::to_string(i) + " has " + std::to_string(inputs[i].size()) +
                       " values, graph expects " + shape_str(n.shapes[0]));
    }
    vals[std::size_t(n.id)] = {Buffer<T>(inputs[i].begin(), inputs[i].end())};
  }
  std::vector<const Buffer<T>*> in;
  std::vector<const Shape*> shapes;
  for (const OpNode& n : g.nodes) {
    if (n.kind == "input") continue;
    in.clear();
    shapes.clear();
    for (const Ref& r : n.inputs) {
      in.push_back(&vals[std::size_t(r.node)][std::size_t(r.port)]);
      shapes.push_back(&g.shape(r));
    }
    vals[std::size_t(n.id)] = eval_node<T>(n, in, shapes);
  }
  std::vector<std::vector<double>> out;
  for (int id : g.outputs) {
    const auto& b = vals[std::size_t(id)][0];
    out.emplace_back(b.begin(), b.end());
  }
  return out;
}

inline std::vector<std::vector<double>> execute(const OpGraph& g, const std::vector<std::vector<double>>& inputs,
                                                std::size_t elem_bytes) {
  if (elem_bytes == 4) return execute<float>(g, inputs);
  if (elem_bytes == 8) return execute<double>(g, inputs);
  throw ConfigError("element width must be 4 or 8 bytes");
}

struct Timing {
  std::vector<double> samples_ms;
  double median_ms = 0;
};

/// Median wall time of `repeats` executions after `warmup` untimed ones.
inline Timing time_execution(const OpGraph& g, const std::vector<std::vector<double>>& inputs, std::size_t elem_bytes,
                             std::size_t warmup, std::size_t repeats) {
  if (repeats == 0) throw ConfigError("time_execution: repeats must be positive");
  for (std::size_t i = 0; i < warmup; ++i) execute(g, inputs, elem_bytes);
  Timing t;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    execute(g, inputs, elem_bytes);
    t.samples_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  auto s = t.samples_ms;
  std::nth_element(s.begin(), s.begin() + long(s.size() / 2), s.end());
  t.median_ms = s[s.size() / 2];
  return t;
}

// ---------------------------------------------------------------- capture

namespace detail {

class CaptureRecorder : public trace::Recorder {
 public:
  explicit CaptureRecorder(OpGraph& g) : g_(g) {}

  void add_input(const Tensor& t) {
    OpNode n;
    n.kind = "input";
    n.shapes = {t.shape()};
    const int id = push(std::move(n));
    g_.inputs.push_back(id);
    bind(t, {id, 0});
  }

  Ref ref_of(const Tensor& t) {
    auto it = refs_.find(t.impl().get());
    if (it != refs_.end()) return it->second;
    OpNode n;
    n.kind = "constant";
    n.shapes = {t.shape()};
    n.value = t.values();
    const Ref r{push(std::move(n)), 0};
    bind(t, r);
    return r;
  }

  void record(std::string_view kind, const std::vector<Tensor>& inputs, const std::vector<Tensor>& outputs,
              const trace::Attrs& attrs) override {
    if (!primitive_kinds().count(std::string(kind))) {
      throw ContractError("capture: unregistered primitive '" + std::string(kind) + "'");
    }
    OpNode n;
    n.kind = std::string(kind);
    for (const auto& t : inputs) n.inputs.push_back(ref_of(t));
    for (const auto& t : outputs) n.shapes.push_back(t.shape());
    n.attrs = attrs;
    n.tag = trace::provenance_slot();
    const int id = push(std::move(n));
    for (std::size_t p = 0; p < outputs.size(); ++p) bind(outputs[p], {id, int(p)});
  }

  void reject(std::string_view op) override {
    throw ContractError("capture: operation '" + std::string(op) + "' has no graph counterpart");
  }

  void add_output(const Tensor& t) {
    OpNode n;
    n.kind = "output";
    n.inputs = {ref_of(t)};
    n.shapes = {t.shape()};
    g_.outputs.push_back(push(std::move(n)));
  }

 private:
  int push(OpNode n) {
    n.id = int(g_.nodes.size());
    g_.nodes.push_back(std::move(n));
    return g_.nodes.back().id;
  }
  void bind(const Tensor& t, Ref r) {
    refs_[t.impl().get()] = r;
    keep_.push_back(t);  // pins the address for the lifetime of the capture
  }

  OpGraph& g_;
  std::unordered_map<const void*, Ref> refs_;
  std::vector<Tensor> keep_;
};

}  // namespace detail

using Forward = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

/// Records every primitive called by `forward` on `example` into a static graph.
/// The graph is then replayed on the example and on `probes` random inputs of
/// the same shapes and must reproduce direct execution bit for bit; a mismatch
/// means the procedure depends on values the trace cannot see.
inline OpGraph capture(const Forward& forward, const std::vector<Tensor>& example, std::size_t probes = 1,
                       std::uint64_t probe_seed = 0x5eed) {
  NoGradGuard ng;
  OpGraph g;
  std::vector<Tensor> direct;
  {
    detail::CaptureRecorder rec(g);
    std::vector<Tensor> args;
    for (const auto& t : example) {
      Tensor a = t.detach();  // a private identity per argument
      rec.add_input(a);
      args.push_back(a);
    }
    trace::Scope scope(&rec);
    direct = forward(args);
    for (const auto& t : direct) rec.add_output(t);
  }
  validate(g);
  auto check = [&](const std::vector<Tensor>& xs, const std::vector<Tensor>& want) {
    std::vector<std::vector<double>> vals;
    for (const auto& t : xs) vals.push_back(t.values());
    auto got = execute<double>(g, vals);
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (got[i] != want[i].values()) {
        throw ContractError("capture: replay differs from direct execution (value-dependent control flow?)");
      }
    }
  };
  check(example, direct);
  std::mt19937_64 rng(probe_seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t k = 0; k < probes; ++k) {
    std::vector<Tensor> xs;
    for (const auto& t : example) {
      std::vector<double> v(t.numel());
      for (auto& x : v) x = nd(rng);
      xs.push_back(Tensor::from_vector(t.shape(), std::move(v)));
    }
    check(xs, forward(xs));
  }
  return g;
}

}  // namespace rldx::graphopt
