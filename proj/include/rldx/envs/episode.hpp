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

// Episode records, the binary episode file and dataset directories.
//
// File layout: "RLDX", u32 version, u32 header length, JSON header, then the
// float32 channel arrays in header order. All integers little-endian.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rldx/envs/envs.hpp"

namespace rldx::envs {

inline constexpr std::uint32_t kEpisodeVersion = 1;

struct EpisodeRecord {
  EnvKind kind = EnvKind::kConveyor;
  std::uint64_t seed = 0;
  std::size_t task_id = 0;
  std::size_t embodiment_id = 0;
  bool success = false;
  std::size_t frame_size = 0, state_dim = 0, action_dim = 0, physics_dim = 0;
  // Row-major [T, dim] per channel.
  std::vector<float> frames, states, actions, physics, rewards;

  std::size_t length() const { return rewards.size(); }

  std::vector<float> row(const std::vector<float>& ch, std::size_t dim, std::size_t t) const {
    return {ch.begin() + std::ptrdiff_t(t * dim), ch.begin() + std::ptrdiff_t((t + 1) * dim)};
  }
  std::vector<float> frame(std::size_t t) const { return row(frames, frame_size, t); }
  std::vector<float> state(std::size_t t) const { return row(states, state_dim, t); }
  std::vector<float> action(std::size_t t) const { return row(actions, action_dim, t); }
  std::vector<float> phys(std::size_t t) const { return row(physics, physics_dim, t); }

  /// Equal lengths across channels; reward is 1 at most once, at the final step of a success.
  void validate() const {
    const std::size_t T = length();
    if (frames.size() != T * frame_size || states.size() != T * state_dim || actions.size() != T * action_dim ||
        physics.size() != T * physics_dim) {
      throw FormatError("episode channels have unequal lengths");
    }
    for (std::size_t t = 0; t < T; ++t) {
      const float r = rewards[t];
      if (r != 0.0f && r != 1.0f) throw FormatError("episode reward outside {0,1}");
      if (r == 1.0f && !(success && t + 1 == T)) throw FormatError("reward 1 away from the success step");
    }
    if (success && (T == 0 || rewards.back() != 1.0f)) throw FormatError("successful episode without reward");
  }
};

/// Bitwise equality (floats compared by representation).
inline bool bitwise_equal(const EpisodeRecord& a, const EpisodeRecord& b) {
  auto same = [](const std::vector<float>& x, const std::vector<float>& y) {
    return x.size() == y.size() && (x.empty() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
  };
  return a.kind == b.kind && a.seed == b.seed && a.task_id == b.task_id && a.embodiment_id == b.embodiment_id &&
         a.success == b.success && a.frame_size == b.frame_size && a.state_dim == b.state_dim &&
         a.action_dim == b.action_dim && a.physics_dim == b.physics_dim && same(a.frames, b.frames) &&
         same(a.states, b.states) && same(a.actions, b.actions) && same(a.physics, b.physics) &&
         same(a.rewards, b.rewards);
}

namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
inline std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(in[at + std::size_t(i)])) << (8 * i);
  return v;
}
inline void put_f32(std::string& out, const std::vector<float>& v) {
  for (float x : v) {
    std::uint32_t bits;
    std::memcpy(&bits, &x, 4);
    put_u32(out, bits);
  }
}
inline std::vector<float> get_f32(const std::string& in, std::size_t at, std::size_t n) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(in, at + 4 * i);
    std::memcpy(&v[i], &bits, 4);
  }
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw Error("write failed: " + path.string());
}

}  // namespace io

inline std::string serialize_episode(const EpisodeRecord& e) {
  e.validate();
  const std::size_t T = e.length();
  nlohmann::json channels = nlohmann::json::array();
  auto add_ch = [&](const char* name, std::size_t dim) { channels.push_back({{"name", name}, {"dim", dim}, {"count", T}}); };
  add_ch("frame", e.frame_size);
  add_ch("state", e.state_dim);
  add_ch("action", e.action_dim);
  add_ch("physics", e.physics_dim);
  add_ch("reward", 1);
  nlohmann::json h = {{"env", kind_name(e.kind)}, {"seed", e.seed}, {"task_id", e.task_id},
                      {"embodiment_id", e.embodiment_id}, {"success", e.success}, {"steps", T},
                      {"channels", channels}, {"header_bytes", 0}};
  // header_bytes records the header's own length; fixed-width so the value is stable.
  std::string text;
  for (int pass = 0; pass < 2; ++pass) {
    text = h.dump();
    h["header_bytes"] = text.size();
  }
  if (h.dump().size() != text.size()) throw FormatError("episode header length did not settle");
  text = h.dump();
  std::string out = "RLDX";
  io::put_u32(out, kEpisodeVersion);
  io::put_u32(out, std::uint32_t(text.size()));
  out += text;
  io::put_f32(out, e.frames);
  io::put_f32(out, e.states);
  io::put_f32(out, e.actions);
  io::put_f32(out, e.physics);
  io::put_f32(out, e.rewards);
  return out;
}

inline EpisodeRecord deserialize_episode(const std::string& bytes) {
  if (bytes.size() < 12) throw FormatError("episode file truncated before header");
  if (bytes.compare(0, 4, "RLDX") != 0) throw FormatError("bad magic in episode file");
  const std::uint32_t version = io::get_u32(bytes, 4);
  if (version != kEpisodeVersion) {
    throw FormatError("unsupported episode format version " + std::to_string(version));
  }
  const std::size_t hlen = io::get_u32(bytes, 8);
  if (bytes.size() < 12 + hlen) throw FormatError("episode file truncated inside header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(12, hlen));
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("episode header is not valid JSON: ") + ex.what());
  }
  EpisodeRecord e;
  try {
    if (h.at("header_bytes").get<std::size_t>() != hlen) throw FormatError("episode header length mismatch");
    e.kind = kind_from_name(h.at("env").get<std::string>());
    e.seed = h.at("seed").get<std::uint64_t>();
    e.task_id = h.at("task_id").get<std::size_t>();
    e.embodiment_id = h.at("embodiment_id").get<std::size_t>();
    e.success = h.at("success").get<bool>();
    const std::size_t T = h.at("steps").get<std::size_t>();
    std::size_t at = 12 + hlen;
    const std::vector<std::string> order{"frame", "state", "action", "physics", "reward"};
    const auto& ch = h.at("channels");
    if (ch.size() != order.size()) throw FormatError("episode header lists unexpected channels");
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (ch[i].at("name").get<std::string>() != order[i]) throw FormatError("episode channel order mismatch");
      const std::size_t dim = ch[i].at("dim").get<std::size_t>();
      if (ch[i].at("count").get<std::size_t>() != T) throw FormatError("episode channel count mismatch");
      const std::size_t n = dim * T;
      if (bytes.size() < at + 4 * n) throw FormatError("episode file truncated in channel " + order[i]);
      auto v = io::get_f32(bytes, at, n);
      at += 4 * n;
      switch (i) {
        case 0: e.frame_size = dim; e.frames = std::move(v); break;
        case 1: e.state_dim = dim; e.states = std::move(v); break;
        case 2: e.action_dim = dim; e.actions = std::move(v); break;
        case 3: e.physics_dim = dim; e.physics = std::move(v); break;
        default:
          if (dim != 1) throw FormatError("reward channel must have dim 1");
          e.rewards = std::move(v);
      }
    }
    if (at != bytes.size()) throw FormatError("trailing bytes after episode payload");
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("episode header malformed: ") + ex.what());
  } catch (const ConfigError& ex) {
    throw FormatError(std::string("episode header: ") + ex.what());
  }
  e.validate();
  return e;
}

inline void save_episode(const std::filesystem::path& path, const EpisodeRecord& e) {
  io::write_file(path, serialize_episode(e));
}

inline EpisodeRecord load_episode(const std::filesystem::path& path) {
  return deserialize_episode(io::read_file(path));
}

/// Random action from each environment's action set.
inline std::vector<double> random_action(EnvKind kind, std::mt19937_64& rng) {
  switch (kind) {
    case EnvKind::kConveyor: return {double(std::uniform_int_distribution<int>(-3, 3)(rng))};
    case EnvKind::kShell: {
      const double move = double(std::uniform_int_distribution<int>(-1, 1)(rng));
      return {move, std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0};
    }
    case EnvKind::kProbe: return {std::uniform_real_distribution<double>(0.0, 1.0)(rng)};
  }
  throw ConfigError("unknown environment kind");
}

/// Observations and actions are recorded before each step.
struct Recorder {
  EpisodeRecord rec;

  Recorder(const Env& env, std::uint64_t seed) {
    const auto& sp = env.spec();
    rec.kind = sp.kind;
    rec.seed = seed;
    rec.task_id = sp.task_id;
    rec.embodiment_id = sp.embodiment_id;
    rec.frame_size = sp.frame_size();
    rec.state_dim = sp.state_dim;
    rec.action_dim = sp.action_dim;
    rec.physics_dim = sp.physics_dim;
  }

  void add(const Observation& o, const std::vector<double>& action, double reward) {
    rec.frames.insert(rec.frames.end(), o.frame.begin(), o.frame.end());
    for (double v : o.state) rec.states.push_back(float(v));
    for (double v : action) rec.actions.push_back(float(v));
    for (double v : o.physics) rec.physics.push_back(float(v));
    rec.rewards.push_back(float(reward));
  }
};

/// Scripted rollout. With probability `dither` per step the expert's action
/// is replaced by a random one (detours for RL data).
inline EpisodeRecord rollout_expert(EnvKind kind, std::uint64_t seed, const EnvOptions& opt = {},
                                    double dither = 0.0) {
  auto env = make_env(kind, seed, opt);
  Recorder r(*env, seed);
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  std::bernoulli_distribution coin(dither);
  Observation obs = env->observe();
  while (!env->done()) {
    auto a = env->expert_action();
    if (dither > 0 && coin(rng)) a = random_action(kind, rng);
    auto res = env->step(a);
    r.add(obs, a, res.reward);
    obs = res.obs;
  }
  r.rec.success = env->success();
  return r.rec;
}

struct DatasetManifest {
  EnvKind kind = EnvKind::kConveyor;
  std::size_t episodes = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> files;
  EnvSpec spec{};
  std::vector<int> speeds;
  double dither = 0.0;
  std::uint32_t format_version = kEpisodeVersion;
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  return {{"format_version", m.format_version},
          {"env", kind_name(m.kind)},
          {"episodes", m.episodes},
          {"seeds", m.seeds},
          {"files", m.files},
          {"dims",
           {{"frame", {m.spec.channels, m.spec.height, m.spec.width}},
            {"state", m.spec.state_dim},
            {"action", m.spec.action_dim},
            {"physics", m.spec.physics_dim}}},
          {"speeds", m.speeds},
          {"dither", m.dither}};
}

inline std::string episode_file_name(std::size_t i) {
  std::ostringstream s;
  s << "episode_" << std::setw(5) << std::setfill('0') << i << ".rldx";
  return s.str();
}

/// n expert episodes with seeds seed+i, written to out_dir with manifest.json.
inline DatasetManifest gen_dataset(EnvKind kind, std::size_t n, std::uint64_t seed,
                                   const std::filesystem::path& out_dir, const EnvOptions& opt = {},
                                   double dither = 0.0) {
  std::filesystem::create_directories(out_dir);
  DatasetManifest m;
  m.kind = kind;
  m.episodes = n;
  m.spec = spec_of(kind);
  m.speeds = opt.conveyor_speeds;
  m.dither = dither;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = seed + i;
    save_episode(out_dir / episode_file_name(i), rollout_expert(kind, s, opt, dither));
    m.seeds.push_back(s);
    m.files.push_back(episode_file_name(i));
  }
  io::write_file(out_dir / "manifest.json", to_json(m).dump(2) + "\n");
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("manifest is not valid JSON: ") + ex.what());
  }
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<std::uint32_t>();
    if (m.format_version != kEpisodeVersion) throw FormatError("unsupported dataset format version");
    m.kind = kind_from_name(j.at("env").get<std::string>());
    m.spec = spec_of(m.kind);
    m.episodes = j.at("episodes").get<std::size_t>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.files = j.at("files").get<std::vector<std::string>>();
    m.speeds = j.value("speeds", std::vector<int>{});
    m.dither = j.value("dither", 0.0);
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("manifest malformed: ") + ex.what());
  }
  if (m.files.size() != m.episodes || m.seeds.size() != m.episodes) {
    throw FormatError("manifest episode count does not match its file list");
  }
  for (const auto& f : m.files) {
    if (!std::filesystem::exists(dir / f)) throw FormatError("manifest lists missing file " + f);
  }
  return m;
}

inline std::vector<EpisodeRecord> load_dataset(const std::filesystem::path& dir) {
  auto m = load_manifest(dir);
  std::vector<EpisodeRecord> out;
  for (const auto& f : m.files) {
    out.push_back(load_episode(dir / f));
    if (out.back().kind != m.kind) throw FormatError("episode " + f + " does not match the manifest env");
  }
  return out;
}

}  // namespace rldx::envs
