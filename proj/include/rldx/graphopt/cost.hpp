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

// Launch and memory-traffic accounting, plus numerical equivalence of two graphs.

#include <cmath>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>

#include "json.hpp"

#include "rldx/graphopt/graph.hpp"

namespace rldx::graphopt {

struct NodeCost {
  int id = 0;
  std::string kind;
  std::size_t bytes_read = 0;
  std::size_t bytes_written = 0;
};

struct CostReport {
  std::size_t nodes = 0;
  std::size_t launches = 0;
  std::size_t bytes_read = 0;
  std::size_t bytes_written = 0;
  std::vector<NodeCost> breakdown;  // launch nodes only
  std::optional<double> median_ms;

  std::size_t bytes() const { return bytes_read + bytes_written; }
};

/// Each launch reads every distinct input once and writes every output once;
/// intermediates inside a fused node never touch memory.
inline CostReport cost_model(const OpGraph& g) {
  CostReport rep;
  rep.nodes = g.nodes.size();
  for (const OpNode& n : g.nodes) {
    if (!is_launch(n)) continue;
    NodeCost c{n.id, n.kind, 0, 0};
    std::set<Ref> distinct(n.inputs.begin(), n.inputs.end());
    for (const Ref& r : distinct) c.bytes_read += numel_of(g.shape(r)) * n.elem_bytes;
    for (const Shape& s : n.shapes) c.bytes_written += numel_of(s) * n.elem_bytes;
    rep.bytes_read += c.bytes_read;
    rep.bytes_written += c.bytes_written;
    ++rep.launches;
    rep.breakdown.push_back(std::move(c));
  }
  return rep;
}

/// Launches per node kind.
inline std::map<std::string, std::size_t> launches_by_kind(const CostReport& r) {
  std::map<std::string, std::size_t> out;
  for (const auto& c : r.breakdown) ++out[c.kind];
  return out;
}

inline nlohmann::json to_json(const CostReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : r.breakdown) {
    per.push_back({{"id", c.id}, {"kind", c.kind}, {"bytes_read", c.bytes_read}, {"bytes_written", c.bytes_written}});
  }
  nlohmann::json j{{"nodes", r.nodes},
                   {"launches", r.launches},
                   {"bytes_read", r.bytes_read},
                   {"bytes_written", r.bytes_written},
                   {"bytes_total", r.bytes()},
                   {"launches_by_kind", launches_by_kind(r)},
                   {"breakdown", per}};
  if (r.median_ms) j["median_ms"] = *r.median_ms;
  return j;
}

/// Aligned text table of named reports (one row each).
inline std::string to_table(const std::vector<std::pair<std::string, CostReport>>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "graph" << std::right << std::setw(8) << "nodes" << std::setw(10) << "launches"
     << std::setw(14) << "bytes_read" << std::setw(14) << "bytes_written" << std::setw(14) << "bytes_total"
     << std::setw(12) << "median_ms" << "\n";
  for (const auto& [name, r] : rows) {
    os << std::left << std::setw(10) << name << std::right << std::setw(8) << r.nodes << std::setw(10) << r.launches
       << std::setw(14) << r.bytes_read << std::setw(14) << r.bytes_written << std::setw(14) << r.bytes();
    if (r.median_ms) {
      os << std::setw(12) << std::fixed << std::setprecision(3) << *r.median_ms;
    } else {
      os << std::setw(12) << "-";
    }
    os << "\n";
  }
  return os.str();
}

/// Random standard-normal values for every graph input.
inline std::vector<std::vector<double>> random_inputs(const OpGraph& g, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> xs;
  for (int id : g.inputs) {
    std::vector<double> v(numel_of(g.at(id).shapes[0]));
    for (auto& x : v) x = n(rng);
    xs.push_back(std::move(v));
  }
  return xs;
}

/// Largest difference between corresponding outputs over `trials` random input
/// draws, relative to the largest magnitude of the reference output.
inline double verify_equivalence(const OpGraph& g1, const OpGraph& g2, std::size_t trials, std::size_t elem_bytes,
                                 std::uint64_t seed = 0) {
  if (g1.inputs.size() != g2.inputs.size() || g1.outputs.size() != g2.outputs.size()) {
    throw ContractError("verify_equivalence: graph signatures differ");
  }
  for (std::size_t i = 0; i < g1.inputs.size(); ++i) {
    if (g1.at(g1.inputs[i]).shapes != g2.at(g2.inputs[i]).shapes) {
      throw ContractError("verify_equivalence: input " + std::to_string(i) + " shapes differ");
    }
  }
  for (std::size_t i = 0; i < g1.outputs.size(); ++i) {
    if (g1.at(g1.outputs[i]).shapes != g2.at(g2.outputs[i]).shapes) {
      throw ContractError("verify_equivalence: output " + std::to_string(i) + " shapes differ");
    }
  }
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto xs = random_inputs(g1, rng);
    const auto a = execute(g1, xs, elem_bytes);
    const auto b = execute(g2, xs, elem_bytes);
    for (std::size_t o = 0; o < a.size(); ++o) {
      double ref = 0, diff = 0;
      for (std::size_t i = 0; i < a[o].size(); ++i) {
        ref = std::max(ref, std::abs(a[o][i]));
        diff = std::max(diff, std::abs(a[o][i] - b[o][i]));
      }
      if (!std::isfinite(diff)) return std::numeric_limits<double>::infinity();
      worst = std::max(worst, ref > 0 ? diff / ref : diff);
    }
  }
  return worst;
}

}  // namespace rldx::graphopt
