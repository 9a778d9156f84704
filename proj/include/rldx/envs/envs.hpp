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

// Synthetic environments. Each one hides a single fact that only one
// policy module can recover:
//   conveyor  target speed (needs several frames),
//   shell     token slot (shown briefly, then hidden for 24 steps),
//   probe     surface height (only the contact force reveals it).

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rldx/error.hpp"

namespace rldx::envs {

enum class EnvKind { kConveyor, kShell, kProbe };

inline std::string kind_name(EnvKind k) {
  switch (k) {
    case EnvKind::kConveyor: return "conveyor";
    case EnvKind::kShell: return "shell";
    case EnvKind::kProbe: return "probe";
  }
  return "?";
}

inline EnvKind kind_from_name(const std::string& s) {
  if (s == "conveyor") return EnvKind::kConveyor;
  if (s == "shell") return EnvKind::kShell;
  if (s == "probe") return EnvKind::kProbe;
  throw ConfigError("unknown environment kind: " + s);
}

/// Static facts about an environment's observation/action interface.
struct EnvSpec {
  EnvKind kind;
  std::size_t channels, height, width;
  std::size_t state_dim, action_dim, physics_dim;
  std::size_t horizon;
  std::size_t task_id;
  std::size_t embodiment_id;

  std::size_t frame_size() const { return channels * height * width; }
};

inline EnvSpec spec_of(EnvKind k) {
  switch (k) {
    case EnvKind::kConveyor: return {k, 3, 1, 24, 1, 1, 0, 40, 0, 0};
    case EnvKind::kShell: return {k, 3, 1, 9, 2, 2, 0, 36, 1, 1};
    case EnvKind::kProbe: return {k, 2, 1, 16, 1, 1, 1, 30, 2, 2};
  }
  throw ConfigError("unknown environment kind");
}

/// Per-kind knobs.
struct EnvOptions {
  std::vector<int> conveyor_speeds{1, 3};
};

/// Observation emitted after reset and after every step.
struct Observation {
  std::vector<float> frame;
  std::vector<double> state;
  std::vector<double> physics;
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  bool success = false;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual EnvKind kind() const = 0;
  const EnvSpec& spec() const { return spec_; }
  std::size_t steps() const { return t_; }
  bool done() const { return done_; }
  bool success() const { return success_; }

  virtual Observation observe() const = 0;
  /// Privileged scripted action.
  virtual std::vector<double> expert_action() const = 0;

  StepResult step(const std::vector<double>& action) {
    if (done_) throw ContractError("step called on a finished episode");
    if (action.size() != spec_.action_dim) throw ShapeError("action has wrong dimension");
    for (double a : action) {
      if (!std::isfinite(a)) throw NumericError("non-finite action");
    }
    StepResult r;
    r.success = advance(action);
    ++t_;
    if (r.success) {
      success_ = true;
      done_ = true;
      r.reward = 1.0;
    } else if (failed_ || t_ >= spec_.horizon) {
      done_ = true;
    }
    r.done = done_;
    r.obs = observe();
    return r;
  }

 protected:
  explicit Env(EnvSpec spec) : spec_(spec) {}
  /// Applies the action; returns true on success at this step. May set failed_.
  virtual bool advance(const std::vector<double>& action) = 0;

  EnvSpec spec_;
  std::size_t t_ = 0;
  bool done_ = false;
  bool success_ = false;
  bool failed_ = false;
};

inline int wrap(int x, int n) { return ((x % n) + n) % n; }

/// Ring track of width 24. The target advances v cells per step; the picker
/// moves by an integer in [-3, 3]. Success: picker on target two steps in a row.
class ConveyorEnv : public Env {
 public:
  static constexpr int kWidth = 24;

  ConveyorEnv(std::uint64_t seed, const EnvOptions& opt) : Env(spec_of(EnvKind::kConveyor)) {
    if (opt.conveyor_speeds.empty()) throw ConfigError("conveyor: no speeds configured");
    std::mt19937_64 rng(seed);
    target_ = int(std::uniform_int_distribution<int>(0, kWidth - 1)(rng));
    speed_ = opt.conveyor_speeds[std::uniform_int_distribution<std::size_t>(0, opt.conveyor_speeds.size() - 1)(rng)];
    picker_ = 12;
  }
  /// Direct construction for tests.
  ConveyorEnv(int target, int speed, int picker) : Env(spec_of(EnvKind::kConveyor)), target_(target), speed_(speed), picker_(picker) {}

  EnvKind kind() const override { return EnvKind::kConveyor; }
  int target() const { return target_; }
  int speed() const { return speed_; }
  int picker() const { return picker_; }

  Observation observe() const override {
    Observation o;
    o.frame.assign(spec_.frame_size(), 0.0f);
    o.frame[std::size_t(target_)] = 1.0f;
    o.frame[kWidth + std::size_t(picker_)] = 1.0f;
    o.frame[2 * kWidth + std::size_t(wrap(target_ - picker_ + 12, kWidth))] = 1.0f;
    o.state = {double(picker_)};
    return o;
  }

  std::vector<double> expert_action() const override {
    // g: forward gap from picker to where the target will be after this step.
    const int g = wrap(target_ + speed_ - picker_, kWidth);
    if (g <= 3) return {double(g)};
    if (g >= kWidth - 3) return {double(g - kWidth)};
    const double fwd = speed_ < 3 ? std::ceil(double(g - 3) / double(3 - speed_)) : 1e9;
    const double bwd = std::ceil(double(kWidth - 3 - g) / double(3 + speed_));
    return {fwd <= bwd ? 3.0 : -3.0};
  }

 protected:
  bool advance(const std::vector<double>& action) override {
    const int move = int(std::lround(std::clamp(action[0], -3.0, 3.0)));
    target_ = wrap(target_ + speed_, kWidth);
    picker_ = wrap(picker_ + move, kWidth);
    streak_ = (picker_ == target_) ? streak_ + 1 : 0;
    return streak_ >= 2;
  }

 private:
  int target_ = 0;
  int speed_ = 1;
  int picker_ = 12;
  int streak_ = 0;
};

/// Three slots of width 3. The token slot is cued for steps 0-2, hidden for
/// 24 steps, then a go signal appears. The pointer is locked at slot 1 until
/// go; a commit ends the episode and succeeds iff the pointer is on the token.
class ShellEnv : public Env {
 public:
  static constexpr std::size_t kCueSteps = 3;
  static constexpr std::size_t kHideSteps = 24;
  static constexpr std::size_t kGoStep = kCueSteps + kHideSteps;

  ShellEnv(std::uint64_t seed, const EnvOptions&) : Env(spec_of(EnvKind::kShell)) {
    std::mt19937_64 rng(seed);
    slot_ = std::uniform_int_distribution<int>(0, 2)(rng);
  }
  explicit ShellEnv(int slot) : Env(spec_of(EnvKind::kShell)), slot_(slot) {}

  EnvKind kind() const override { return EnvKind::kShell; }
  int slot() const { return slot_; }
  int pointer() const { return pointer_; }
  bool go() const { return t_ >= kGoStep; }

  Observation observe() const override {
    Observation o;
    o.frame.assign(spec_.frame_size(), 0.0f);
    if (t_ < kCueSteps) {
      for (int c = 0; c < 3; ++c) o.frame[std::size_t(3 * slot_ + c)] = 1.0f;
    }
    for (int c = 0; c < 3; ++c) o.frame[9 + std::size_t(3 * pointer_ + c)] = 1.0f;
    if (go()) {
      for (std::size_t c = 0; c < 9; ++c) o.frame[18 + c] = 1.0f;
    }
    o.state = {double(pointer_), go() ? 1.0 : 0.0};
    return o;
  }

  std::vector<double> expert_action() const override {
    const double dir = slot_ > pointer_ ? 1.0 : (slot_ < pointer_ ? -1.0 : 0.0);
    if (go() && pointer_ == slot_) return {0.0, 1.0};
    return {dir, 0.0};
  }

 protected:
  bool advance(const std::vector<double>& action) override {
    if (!go()) return false;
    if (action[1] > 0.5) {
      failed_ = pointer_ != slot_;
      return pointer_ == slot_;
    }
    const int move = int(std::lround(std::clamp(action[0], -1.0, 1.0)));
    pointer_ = std::clamp(pointer_ + move, 0, 2);
    return false;
  }

 private:
  int slot_ = 0;
  int pointer_ = 1;
};

/// A probe pushes down onto a surface at hidden height h. Force is
/// max(0, depth - h). Pushes below 0.1 count as holds: a hold outside the
/// force band [2, 4] fails, as does force above 4. Two consecutive holds
/// inside the band succeed.
class ProbeEnv : public Env {
 public:
  static constexpr double kHoldThreshold = 0.1;
  static constexpr double kBandLo = 2.0;
  static constexpr double kBandHi = 4.0;

  ProbeEnv(std::uint64_t seed, const EnvOptions&) : Env(spec_of(EnvKind::kProbe)) {
    std::mt19937_64 rng(seed);
    height_ = std::uniform_real_distribution<double>(10.0, 14.0)(rng);
  }
  explicit ProbeEnv(double height) : Env(spec_of(EnvKind::kProbe)), height_(height) {}

  EnvKind kind() const override { return EnvKind::kProbe; }
  double height() const { return height_; }
  double depth() const { return depth_; }
  double force() const { return std::max(0.0, kappa_ * (depth_ - height_)); }

  Observation observe() const override {
    Observation o;
    o.frame.assign(spec_.frame_size(), 0.0f);
    for (std::size_t i = 0; i < 16; ++i) {
      o.frame[i] = float(std::clamp(depth_ / 1.25 - double(i), 0.0, 1.0));
    }
    if (held_) {
      for (std::size_t i = 0; i < 16; ++i) o.frame[16 + i] = 1.0f;
    }
    o.state = {depth_};
    o.physics = {force()};
    return o;
  }

  std::vector<double> expert_action() const override {
    const double a = std::clamp(height_ + 3.0 - depth_, 0.0, 1.0);
    return {a < kHoldThreshold ? 0.0 : a};
  }

 protected:
  bool advance(const std::vector<double>& action) override {
    const double a = std::clamp(action[0], 0.0, 1.0);
    held_ = a < kHoldThreshold;
    if (!held_) {
      depth_ += a;
      holds_ = 0;
      if (force() > kBandHi) failed_ = true;
      return false;
    }
    const double p = force();
    if (p < kBandLo || p > kBandHi) {
      failed_ = true;
      return false;
    }
    return ++holds_ >= 2;
  }

 private:
  double height_ = 12.0;
  double depth_ = 0.0;
  double kappa_ = 1.0;
  bool held_ = false;
  int holds_ = 0;
};

inline std::unique_ptr<Env> make_env(EnvKind kind, std::uint64_t seed, const EnvOptions& opt = {}) {
  switch (kind) {
    case EnvKind::kConveyor: return std::make_unique<ConveyorEnv>(seed, opt);
    case EnvKind::kShell: return std::make_unique<ShellEnv>(seed, opt);
    case EnvKind::kProbe: return std::make_unique<ProbeEnv>(seed, opt);
  }
  throw ConfigError("unknown environment kind");
}

}  // namespace rldx::envs
