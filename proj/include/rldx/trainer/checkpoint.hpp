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

// Checkpoint directory:
//   index.json   {name -> {dtype, shape, offset}} plus payload size
//   params.bin   raw little-endian float64 payload
//   stats.json   per-embodiment normalization statistics
//   config.json  policy configuration

#include <bit>
#include <cstring>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "rldx/envs/episode.hpp"
#include "rldx/trainer/policy.hpp"

namespace rldx::ckpt {

using nlohmann::json;

inline json to_json(const encoder::EncoderConfig& c) {
  return {{"d", c.d}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads}, {"ffn_hidden", c.ffn_hidden},
          {"stss_layer_index", c.stss_layer_index}, {"stss_radius", c.stss_radius}, {"stss_hidden", c.stss_hidden},
          {"compress_layer_index", c.compress_layer_index}, {"n_q", c.n_q},
          {"extract_layer_index", c.extract_layer_index}, {"n_tasks", c.n_tasks}, {"channels", c.channels},
          {"height", c.height}, {"width", c.width}, {"patch_h", c.patch_h}, {"patch_w", c.patch_w},
          {"offsets", c.offsets}, {"rope_base", c.rope_base}, {"eps", c.eps}, {"motion", c.motion},
          {"compress", c.compress}};
}

/// Reads keys present in `j` over the defaults in `c`; unknown keys are rejected.
template <class T>
void read_field(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  seen.insert(key);
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!seen.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

inline encoder::EncoderConfig encoder_from_json(const json& j, encoder::EncoderConfig c = {}) {
  std::set<std::string> s;
  read_field(j, "d", c.d, s);
  read_field(j, "n_layers", c.n_layers, s);
  read_field(j, "n_heads", c.n_heads, s);
  read_field(j, "ffn_hidden", c.ffn_hidden, s);
  read_field(j, "stss_layer_index", c.stss_layer_index, s);
  read_field(j, "stss_radius", c.stss_radius, s);
  read_field(j, "stss_hidden", c.stss_hidden, s);
  read_field(j, "compress_layer_index", c.compress_layer_index, s);
  read_field(j, "n_q", c.n_q, s);
  read_field(j, "extract_layer_index", c.extract_layer_index, s);
  read_field(j, "n_tasks", c.n_tasks, s);
  read_field(j, "channels", c.channels, s);
  read_field(j, "height", c.height, s);
  read_field(j, "width", c.width, s);
  read_field(j, "patch_h", c.patch_h, s);
  read_field(j, "patch_w", c.patch_w, s);
  read_field(j, "offsets", c.offsets, s);
  read_field(j, "rope_base", c.rope_base, s);
  read_field(j, "eps", c.eps, s);
  read_field(j, "motion", c.motion, s);
  read_field(j, "compress", c.compress, s);
  reject_unknown(j, s, "encoder config");
  return c;
}

inline json to_json(const memory::MemoryConfig& c) {
  return {{"d", c.d}, {"n_q", c.n_q}, {"capacity", c.capacity}, {"interval", c.interval},
          {"n_layers", c.n_layers}, {"n_heads", c.n_heads}, {"ffn_hidden", c.ffn_hidden},
          {"rope_base", c.rope_base}, {"eps", c.eps}};
}

inline memory::MemoryConfig memory_from_json(const json& j, memory::MemoryConfig c = {}) {
  std::set<std::string> s;
  read_field(j, "d", c.d, s);
  read_field(j, "n_q", c.n_q, s);
  read_field(j, "capacity", c.capacity, s);
  read_field(j, "interval", c.interval, s);
  read_field(j, "n_layers", c.n_layers, s);
  read_field(j, "n_heads", c.n_heads, s);
  read_field(j, "ffn_hidden", c.ffn_hidden, s);
  read_field(j, "rope_base", c.rope_base, s);
  read_field(j, "eps", c.eps, s);
  reject_unknown(j, s, "memory config");
  return c;
}

inline json to_json(const msat::MsatConfig& c) {
  return {{"d_model", c.d_model}, {"n_heads", c.n_heads}, {"n_phase1", c.n_phase1}, {"n_phase2", c.n_phase2},
          {"H", c.H}, {"L", c.L}, {"ffn_hidden", c.ffn_hidden}, {"in_hidden", c.in_hidden},
          {"rope_base", c.rope_base}, {"time_scale", c.time_scale}, {"eps", c.eps},
          {"a_position_offset", c.a_position_offset}, {"physics_gate_init", c.physics_gate_init}};
}

inline msat::MsatConfig msat_from_json(const json& j, msat::MsatConfig c = {}) {
  std::set<std::string> s;
  read_field(j, "d_model", c.d_model, s);
  read_field(j, "n_heads", c.n_heads, s);
  read_field(j, "n_phase1", c.n_phase1, s);
  read_field(j, "n_phase2", c.n_phase2, s);
  read_field(j, "H", c.H, s);
  read_field(j, "L", c.L, s);
  read_field(j, "ffn_hidden", c.ffn_hidden, s);
  read_field(j, "in_hidden", c.in_hidden, s);
  read_field(j, "rope_base", c.rope_base, s);
  read_field(j, "time_scale", c.time_scale, s);
  read_field(j, "eps", c.eps, s);
  read_field(j, "a_position_offset", c.a_position_offset, s);
  read_field(j, "physics_gate_init", c.physics_gate_init, s);
  reject_unknown(j, s, "msat config");
  return c;
}

inline json to_json(const msat::Registry& r) {
  json out = json::array();
  for (const auto& e : r.list()) {
    out.push_back({{"name", e.name}, {"state_dim", e.state_dim}, {"action_dim", e.action_dim},
                   {"physics_dim", e.physics_dim}});
  }
  return out;
}

inline msat::Registry registry_from_json(const json& j) {
  std::vector<msat::Embodiment> list;
  for (const auto& e : j) {
    list.push_back({e.at("name").get<std::string>(), e.at("state_dim").get<std::size_t>(),
                    e.at("action_dim").get<std::size_t>(), e.at("physics_dim").get<std::size_t>()});
  }
  return msat::Registry(std::move(list));
}

inline json to_json(const PolicyConfig& c) {
  return {{"encoder", to_json(c.enc)}, {"memory", to_json(c.mem)}, {"msat", to_json(c.msat)},
          {"registry", to_json(c.registry)}, {"use_memory", c.use_memory}, {"use_physics", c.use_physics}};
}

inline PolicyConfig policy_config_from_json(const json& j, PolicyConfig c = {}) {
  std::set<std::string> s;
  s.insert("encoder");
  if (j.contains("encoder")) c.enc = encoder_from_json(j.at("encoder"), c.enc);
  s.insert("memory");
  if (j.contains("memory")) c.mem = memory_from_json(j.at("memory"), c.mem);
  s.insert("msat");
  if (j.contains("msat")) c.msat = msat_from_json(j.at("msat"), c.msat);
  s.insert("registry");
  if (j.contains("registry")) c.registry = registry_from_json(j.at("registry"));
  read_field(j, "use_memory", c.use_memory, s);
  read_field(j, "use_physics", c.use_physics, s);
  reject_unknown(j, s, "model config");
  return c;
}

/// Index + little-endian float64 payload for a ParamStore.
inline std::pair<json, std::string> serialize_params(const ParamStore& ps) {
  static_assert(std::endian::native == std::endian::little, "payload writer assumes a little-endian host");
  json index = json::object();
  std::string payload;
  for (const auto& [name, t] : ps) {
    index[name] = {{"dtype", "f64"}, {"shape", t.shape()}, {"offset", payload.size()}};
    const auto* p = reinterpret_cast<const char*>(t.values().data());
    payload.append(p, t.numel() * sizeof(double));
  }
  return {json{{"format_version", 1}, {"payload_bytes", payload.size()}, {"tensors", index}}, payload};
}

inline ParamStore deserialize_params(const json& index, const std::string& payload) {
  ParamStore ps;
  try {
    if (index.at("format_version").get<int>() != 1) throw FormatError("unsupported checkpoint version");
    if (index.at("payload_bytes").get<std::size_t>() != payload.size()) {
      throw FormatError("checkpoint payload size does not match its index");
    }
    for (const auto& [name, e] : index.at("tensors").items()) {
      if (e.at("dtype").get<std::string>() != "f64") throw FormatError("unsupported dtype for " + name);
      Shape shape = e.at("shape").get<Shape>();
      const std::size_t off = e.at("offset").get<std::size_t>();
      const std::size_t n = numel_of(shape);
      if (off + n * sizeof(double) > payload.size()) throw FormatError("checkpoint tensor " + name + " out of range");
      std::vector<double> v(n);
      std::memcpy(v.data(), payload.data() + off, n * sizeof(double));
      ps.add(name, Tensor::parameter(shape, std::move(v)));
    }
  } catch (const json::exception& ex) {
    throw FormatError(std::string("checkpoint index malformed: ") + ex.what());
  }
  return ps;
}

inline json stats_to_json(const std::map<std::size_t, flow::NormStats>& stats) {
  json j = json::object();
  for (const auto& [id, s] : stats) j[std::to_string(id)] = flow::to_json(s);
  return j;
}

inline std::map<std::size_t, flow::NormStats> stats_from_json(const json& j) {
  std::map<std::size_t, flow::NormStats> out;
  try {
    for (const auto& [k, v] : j.items()) out[std::stoul(k)] = flow::norm_stats_from_json(v);
  } catch (const json::exception& ex) {
    throw FormatError(std::string("stats file malformed: ") + ex.what());
  }
  return out;
}

inline void save(const std::filesystem::path& dir, const Policy& p) {
  std::filesystem::create_directories(dir);
  auto [index, payload] = serialize_params(p.params());
  envs::io::write_file(dir / "index.json", index.dump(1) + "\n");
  envs::io::write_file(dir / "params.bin", payload);
  envs::io::write_file(dir / "stats.json", stats_to_json(p.stats()).dump(1) + "\n");
  envs::io::write_file(dir / "config.json", to_json(p.config()).dump(1) + "\n");
}

inline json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(envs::io::read_file(path));
  } catch (const json::exception& ex) {
    throw FormatError(path.filename().string() + " is not valid JSON: " + ex.what());
  }
}

inline Policy load(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "index.json")) throw Error("missing checkpoint at " + dir.string());
  PolicyConfig cfg;
  try {
    cfg = policy_config_from_json(parse_json_file(dir / "config.json"));
  } catch (const json::exception& ex) {
    throw FormatError(std::string("checkpoint config malformed: ") + ex.what());
  }
  Policy p(cfg, 0);
  ParamStore loaded = deserialize_params(parse_json_file(dir / "index.json"), envs::io::read_file(dir / "params.bin"));
  if (loaded.size() != p.params().size()) throw FormatError("checkpoint parameter set does not match its config");
  for (auto& [name, t] : loaded) {
    if (!p.params().contains(name) || p.params()[name].shape() != t.shape()) {
      throw FormatError("checkpoint tensor " + name + " does not match the model");
    }
    p.params().set_values(name, t.values());
  }
  p.stats() = stats_from_json(parse_json_file(dir / "stats.json"));
  return p;
}

}  // namespace rldx::ckpt
