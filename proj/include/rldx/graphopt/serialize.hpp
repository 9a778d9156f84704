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

// On-disk graph format:
//   graph.json   nodes (kind, inputs, attrs, shapes, tag, constant offsets)
//   consts.bin   little-endian float64 payload of all constants

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "rldx/graphopt/graph.hpp"

namespace rldx::graphopt {

inline constexpr int kGraphFormatVersion = 1;

/// 64-bit FNV-1a over a byte string.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::pair<nlohmann::json, std::string> serialize_graph(const OpGraph& g) {
  static_assert(std::endian::native == std::endian::little, "payload writer assumes a little-endian host");
  using nlohmann::json;
  std::string blob;
  json nodes = json::array();
  for (const OpNode& n : g.nodes) {
    json ins = json::array();
    for (const Ref& r : n.inputs) ins.push_back({r.node, r.port});
    json j{{"id", n.id},         {"kind", n.kind},           {"inputs", ins}, {"attrs", n.attrs},
           {"shapes", n.shapes}, {"elem_bytes", n.elem_bytes}, {"tag", n.tag}};
    if (n.kind == "constant") {
      j["offset"] = blob.size();
      blob.append(reinterpret_cast<const char*>(n.value.data()), n.value.size() * sizeof(double));
    }
    nodes.push_back(std::move(j));
  }
  json index{{"format_version", kGraphFormatVersion},
             {"inputs", g.inputs},
             {"outputs", g.outputs},
             {"payload_bytes", blob.size()},
             {"payload_fnv1a", fnv1a(blob)},
             {"nodes", nodes}};
  return {index, blob};
}

inline OpGraph deserialize_graph(const nlohmann::json& index, const std::string& blob) {
  OpGraph g;
  try {
    if (index.at("format_version").get<int>() != kGraphFormatVersion) throw FormatError("unsupported graph format version");
    if (index.at("payload_bytes").get<std::size_t>() != blob.size()) throw FormatError("graph payload size mismatch");
    if (index.at("payload_fnv1a").get<std::uint64_t>() != fnv1a(blob)) throw FormatError("graph payload checksum mismatch");
    for (const auto& j : index.at("nodes")) {
      OpNode n;
      n.id = j.at("id").get<int>();
      n.kind = j.at("kind").get<std::string>();
      for (const auto& r : j.at("inputs")) n.inputs.push_back({r.at(0).get<int>(), r.at(1).get<int>()});
      n.attrs = j.at("attrs").get<Attrs>();
      n.shapes = j.at("shapes").get<std::vector<Shape>>();
      n.elem_bytes = j.at("elem_bytes").get<std::size_t>();
      n.tag = j.at("tag").get<std::string>();
      if (n.kind == "constant") {
        if (n.shapes.size() != 1) throw FormatError("constant node needs exactly one shape");
        const std::size_t off = j.at("offset").get<std::size_t>();
        const std::size_t count = numel_of(n.shapes[0]);
        if (off > blob.size() || count * sizeof(double) > blob.size() - off) {
          throw FormatError("constant payload out of range");
        }
        n.value.resize(count);
        std::memcpy(n.value.data(), blob.data() + off, count * sizeof(double));
      }
      g.nodes.push_back(std::move(n));
    }
    g.inputs = index.at("inputs").get<std::vector<int>>();
    g.outputs = index.at("outputs").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("graph index malformed: ") + ex.what());
  }
  validate(g);
  return g;
}

inline void save_graph(const std::filesystem::path& dir, const OpGraph& g) {
  std::filesystem::create_directories(dir);
  auto [index, blob] = serialize_graph(g);
  std::ofstream(dir / "graph.json", std::ios::trunc) << index.dump(1) << "\n";
  std::ofstream f(dir / "consts.bin", std::ios::binary | std::ios::trunc);
  f.write(blob.data(), std::streamsize(blob.size()));
  if (!f) throw Error("cannot write " + (dir / "consts.bin").string());
}

inline OpGraph load_graph(const std::filesystem::path& dir) {
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw Error("cannot open " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(slurp(dir / "graph.json"));
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("graph.json is not valid JSON: ") + ex.what());
  }
  return deserialize_graph(index, slurp(dir / "consts.bin"));
}

}  // namespace rldx::graphopt
