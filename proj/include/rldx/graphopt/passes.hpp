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

// Graph rewrites: constant folding with dead-node removal, and rule-based fusion.

#include <optional>
#include <queue>

#include "rldx/graphopt/graph.hpp"

namespace rldx::graphopt {

namespace detail {

/// Rebuilds `nodes` (ids arbitrary, inputs referring to those ids) into a valid
/// graph: keeps nodes that reach an output, orders them topologically (ties by
/// the given order) and renumbers.
inline OpGraph rebuild(const std::vector<OpNode>& nodes, const std::vector<int>& inputs,
                       const std::vector<int>& outputs) {
  std::unordered_map<int, std::size_t> pos;
  for (std::size_t i = 0; i < nodes.size(); ++i) pos[nodes[i].id] = i;
  std::vector<char> live(nodes.size(), 0);
  std::vector<std::size_t> stack;
  for (int o : outputs) stack.push_back(pos.at(o));
  for (int i : inputs) live[pos.at(i)] = 1;  // signature is kept even if unused
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    if (live[i] == 2) continue;
    live[i] = 2;
    for (const Ref& r : nodes[i].inputs) stack.push_back(pos.at(r.node));
  }
  // Kahn's algorithm, smallest original position first.
  std::vector<int> indeg(nodes.size(), 0);
  std::vector<std::vector<std::size_t>> users(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!live[i]) continue;
    std::set<std::size_t> srcs;
    for (const Ref& r : nodes[i].inputs) srcs.insert(pos.at(r.node));
    indeg[i] = int(srcs.size());
    for (auto s : srcs) users[s].push_back(i);
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (live[i] && indeg[i] == 0) ready.push(i);
  std::unordered_map<int, int> new_id;
  OpGraph g;
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    OpNode n = nodes[i];
    new_id[n.id] = int(g.nodes.size());
    n.id = int(g.nodes.size());
    for (Ref& r : n.inputs) r.node = new_id.at(r.node);
    g.nodes.push_back(std::move(n));
    for (auto u : users[i])
      if (--indeg[u] == 0) ready.push(u);
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (live[i] && !new_id.count(nodes[i].id)) throw ContractError("graph rewrite produced a cycle");
  }
  for (int i : inputs) g.inputs.push_back(new_id.at(i));
  for (int o : outputs) g.outputs.push_back(new_id.at(o));
  validate(g);
  return g;
}

}  // namespace detail

/// Evaluates every node whose inputs are all constants once (in 64-bit) and
/// replaces it by constant nodes; unreachable nodes are dropped.
inline OpGraph fold_constants(const OpGraph& g) {
  const int N = int(g.nodes.size());
  std::vector<OpNode> nodes = g.nodes;
  std::vector<OpNode> extra;      // new constants, ids N, N+1, ...
  std::map<Ref, int> folded;      // (folded node, port) -> replacing constant id
  auto node_of = [&](int id) -> const OpNode& {
    return id >= N ? extra[std::size_t(id - N)] : nodes[std::size_t(id)];
  };
  for (auto& n : nodes) {
    for (Ref& r : n.inputs) {
      auto it = folded.find(r);
      if (it != folded.end()) r = {it->second, 0};
    }
    if (!is_launch(n) || n.inputs.empty()) continue;
    bool all = true;
    for (const Ref& r : n.inputs) all = all && node_of(r.node).kind == "constant";
    if (!all) continue;
    std::vector<const Buffer<double>*> in;
    std::vector<const Shape*> shapes;
    for (const Ref& r : n.inputs) {
      in.push_back(&node_of(r.node).value);
      shapes.push_back(&node_of(r.node).shapes[0]);
    }
    auto outs = eval_node<double>(n, in, shapes);
    for (std::size_t p = 0; p < outs.size(); ++p) {
      OpNode c;
      c.id = N + int(extra.size());
      c.kind = "constant";
      c.shapes = {n.shapes[p]};
      c.elem_bytes = n.elem_bytes;
      c.value = std::move(outs[p]);
      folded[{n.id, int(p)}] = c.id;
      extra.push_back(std::move(c));
    }
  }
  // Each new constant takes the slot of the node it replaces.
  std::map<int, std::vector<int>> by_source;
  for (const auto& [ref, cid] : folded) by_source[ref.node].push_back(cid);
  std::vector<OpNode> merged;
  for (auto& n : nodes) {
    auto it = by_source.find(n.id);
    if (it != by_source.end()) {
      for (int cid : it->second) merged.push_back(std::move(extra[std::size_t(cid - N)]));
    }
    merged.push_back(std::move(n));
  }
  return detail::rebuild(merged, g.inputs, g.outputs);
}

// ---------------------------------------------------------------- fusion

struct FusionStats {
  std::map<std::string, std::size_t> fired;  // fused kind -> count
  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& [k, v] : fired) t += v;
    return t;
  }
};

namespace detail {

struct Matcher {
  const OpGraph& g;
  std::map<Ref, int> uses;
  std::vector<char> taken;

  explicit Matcher(const OpGraph& graph) : g(graph), uses(consumer_counts(graph)), taken(graph.nodes.size(), 0) {}

  /// Producer of `r` if it has `kind`, one output, a single consumer and is still free.
  std::optional<int> internal(const Ref& r, const std::string& kind) const {
    const OpNode& n = g.at(r.node);
    if (n.kind != kind || taken[std::size_t(n.id)] || n.shapes.size() != 1) return std::nullopt;
    auto it = uses.find(r);
    if (it == uses.end() || it->second != 1) return std::nullopt;
    return n.id;
  }
};

inline OpNode fused_node(const OpNode& sink, std::string kind, std::vector<Ref> inputs, Attrs attrs) {
  OpNode f;
  f.id = sink.id;
  f.kind = std::move(kind);
  f.inputs = std::move(inputs);
  f.attrs = std::move(attrs);
  f.shapes = sink.shapes;
  f.elem_bytes = sink.elem_bytes;
  f.tag = sink.tag;
  return f;
}

inline void append_optional(const OpNode& attn, std::vector<Ref>& ins, Attrs& attrs) {
  for (std::size_t i = 3; i < attn.inputs.size(); ++i) ins.push_back(attn.inputs[i]);
  for (const char* key : {"heads", "scale", "has_mask", "has_key_scale"}) attrs[key] = attr(attn, key);
}

// Rule 1: rmsnorm->rope on q and on k feeding one attention.
inline std::optional<std::pair<OpNode, std::vector<int>>> match_llm_attn(Matcher& m, const OpNode& attn) {
  auto rq = m.internal(attn.inputs[0], "rope");
  auto rk = m.internal(attn.inputs[1], "rope");
  if (!rq || !rk || *rq == *rk) return std::nullopt;
  auto nq = m.internal(m.g.at(*rq).inputs[0], "rmsnorm");
  auto nk = m.internal(m.g.at(*rk).inputs[0], "rmsnorm");
  if (!nq || !nk || *nq == *nk) return std::nullopt;
  const OpNode &Rq = m.g.at(*rq), &Rk = m.g.at(*rk), &Nq = m.g.at(*nq), &Nk = m.g.at(*nk);
  std::vector<Ref> ins{Nq.inputs[0], Nq.inputs[1], Rq.inputs[1], Nk.inputs[0], Nk.inputs[1], Rk.inputs[1],
                       attn.inputs[2]};
  Attrs a{{"q_eps", attr(Nq, "eps")}, {"k_eps", attr(Nk, "eps")}};
  append_optional(attn, ins, a);
  return std::pair{fused_node(attn, "FusedLLMAttn", ins, a), std::vector<int>{*rq, *rk, *nq, *nk}};
}

// Rule 2: rope on q and k feeding one attention; memory-tagged attention becomes FusedMemAttn.
inline std::optional<std::pair<OpNode, std::vector<int>>> match_rope_attn(Matcher& m, const OpNode& attn) {
  auto rq = m.internal(attn.inputs[0], "rope");
  auto rk = m.internal(attn.inputs[1], "rope");
  if (!rq || !rk || *rq == *rk) return std::nullopt;
  const OpNode &Rq = m.g.at(*rq), &Rk = m.g.at(*rk);
  std::vector<Ref> ins{Rq.inputs[0], Rq.inputs[1], Rk.inputs[0], Rk.inputs[1], attn.inputs[2]};
  Attrs a;
  append_optional(attn, ins, a);
  const std::string kind = attn.tag == "memory" ? "FusedMemAttn" : "FusedVisAttn";
  return std::pair{fused_node(attn, kind, ins, a), std::vector<int>{*rq, *rk}};
}

// Rule 5: add(add(a,b),c) -> rmsnorm.
inline std::optional<std::pair<OpNode, std::vector<int>>> match_add3_rms(Matcher& m, const OpNode& norm) {
  auto outer = m.internal(norm.inputs[0], "add");
  if (!outer) return std::nullopt;
  const OpNode& O = m.g.at(*outer);
  for (int side : {0, 1}) {
    auto inner = m.internal(O.inputs[std::size_t(side)], "add");
    if (!inner) continue;
    const OpNode& I = m.g.at(*inner);
    std::vector<Ref> ins{I.inputs[0], I.inputs[1], O.inputs[std::size_t(1 - side)], norm.inputs[1]};
    Attrs a{{"eps", attr(norm, "eps")}, {"inner_rhs", double(side)}};
    return std::pair{fused_node(norm, "FusedAdd3RMSNorm", ins, a), std::vector<int>{*outer, *inner}};
  }
  return std::nullopt;
}

// Rules 3 and 4: add -> layernorm / rmsnorm.
inline std::optional<std::pair<OpNode, std::vector<int>>> match_add_norm(Matcher& m, const OpNode& norm) {
  auto add = m.internal(norm.inputs[0], "add");
  if (!add) return std::nullopt;
  const OpNode& A = m.g.at(*add);
  std::vector<Ref> ins{A.inputs[0], A.inputs[1]};
  for (std::size_t i = 1; i < norm.inputs.size(); ++i) ins.push_back(norm.inputs[i]);
  const std::string kind = norm.kind == "layernorm" ? "FusedAddLayerNorm" : "FusedAddRMSNorm";
  return std::pair{fused_node(norm, kind, ins, {{"eps", attr(norm, "eps")}}), std::vector<int>{*add}};
}

/// ASAP level of each node: 0 for sources, 1 + max over inputs otherwise.
inline std::vector<int> levels(const OpGraph& g) {
  std::vector<int> lv(g.nodes.size(), 0);
  for (const auto& n : g.nodes)
    for (const Ref& r : n.inputs) lv[std::size_t(n.id)] = std::max(lv[std::size_t(n.id)], lv[std::size_t(r.node)] + 1);
  return lv;
}

}  // namespace detail

/// Greedy fusion in topological order, longest pattern first; a pattern only
/// fires when each of its internal intermediates has exactly one consumer.
inline OpGraph fuse(const OpGraph& g, FusionStats* stats = nullptr) {
  detail::Matcher m(g);
  std::map<int, OpNode> replace;  // sink id -> fused node
  FusionStats st;
  for (const OpNode& n : g.nodes) {
    std::optional<std::pair<OpNode, std::vector<int>>> hit;
    if (n.kind == "attention") {
      hit = detail::match_llm_attn(m, n);
      if (!hit) hit = detail::match_rope_attn(m, n);
    } else if (n.kind == "rmsnorm") {
      hit = detail::match_add3_rms(m, n);
      if (!hit) hit = detail::match_add_norm(m, n);
    } else if (n.kind == "layernorm") {
      hit = detail::match_add_norm(m, n);
    }
    if (!hit) continue;
    for (int id : hit->second) m.taken[std::size_t(id)] = 1;
    m.taken[std::size_t(n.id)] = 1;
    ++st.fired[hit->first.kind];
    replace[n.id] = std::move(hit->first);
  }

  // Rules 6 and 7: pair independent equal-shape SwiGLUs on the same frontier, wrap the rest.
  const auto lv = detail::levels(g);
  std::map<std::pair<int, Shape>, std::vector<int>> frontier;
  for (const OpNode& n : g.nodes) {
    if (n.kind == "swiglu") frontier[{lv[std::size_t(n.id)], g.shape(n.inputs[0])}].push_back(n.id);
  }
  std::map<int, int> moved;  // second swiglu of a pair -> first
  for (const auto& [key, ids] : frontier) {
    std::size_t i = 0;
    for (; i + 1 < ids.size(); i += 2) {
      const OpNode &a = g.at(ids[i]), &b = g.at(ids[i + 1]);
      OpNode f = detail::fused_node(a, "GroupedSwiGLU", {a.inputs[0], b.inputs[0]}, {});
      f.shapes = {a.shapes[0], b.shapes[0]};
      moved[b.id] = a.id;
      replace[a.id] = std::move(f);
      ++st.fired["GroupedSwiGLU"];
    }
    if (i < ids.size()) {
      const OpNode& a = g.at(ids[i]);
      replace[a.id] = detail::fused_node(a, "FusedSwiGLU", {a.inputs[0]}, {});
      ++st.fired["FusedSwiGLU"];
    }
  }

  std::vector<char> removed(g.nodes.size(), 0);
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (m.taken[i] && !replace.count(int(i))) removed[i] = 1;
  }
  for (const auto& [b, a] : moved) removed[std::size_t(b)] = 1;
  std::vector<OpNode> nodes;
  for (const OpNode& n : g.nodes) {
    if (removed[std::size_t(n.id)]) continue;
    OpNode x = replace.count(n.id) ? replace.at(n.id) : n;
    for (Ref& r : x.inputs) {
      auto it = moved.find(r.node);
      if (it != moved.end()) r = {it->second, 1};
    }
    nodes.push_back(std::move(x));
  }
  if (stats) *stats = st;
  return detail::rebuild(nodes, g.inputs, g.outputs);
}

}  // namespace rldx::graphopt
