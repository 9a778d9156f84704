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
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "rldx/numerics/ops.hpp"

namespace rldx::flow {

/// Per-dimension 1st/99th percentile bounds for one channel.
struct DimStats {
  std::vector<double> q01;
  std::vector<double> q99;

  std::size_t dims() const { return q01.size(); }
};

/// Percentile statistics per embodiment and channel.
struct NormStats {
  DimStats state;
  DimStats action;
  DimStats physics;
};

/// Nearest-rank percentile: the ceil(p*n)-th smallest value (1-based).
inline double nearest_rank(std::vector<double> values, double p) {
  if (values.empty()) throw ContractError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double n = double(values.size());
  std::size_t rank = std::size_t(std::ceil(p * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

/// Statistics over rows of equal width.
inline DimStats compute_dim_stats(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ContractError("compute_norm_stats: empty dataset");
  const std::size_t dims = rows.front().size();
  DimStats s;
  for (std::size_t j = 0; j < dims; ++j) {
    std::vector<double> col;
    col.reserve(rows.size());
    for (const auto& r : rows) {
      if (r.size() != dims) throw ShapeError("compute_norm_stats: ragged rows");
      col.push_back(r[j]);
    }
    s.q01.push_back(nearest_rank(col, 0.01));
    s.q99.push_back(nearest_rank(col, 0.99));
  }
  return s;
}

/// y = 2(x - q01)/(q99 - q01) - 1 over the trailing dim; degenerate dims map to 0.
inline std::vector<double> normalize(const std::vector<double>& x, const DimStats& s) {
  const std::size_t d = s.dims();
  if (d == 0 || x.size() % d != 0) throw ShapeError("normalize: dims do not match statistics");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t j = i % d;
    const double span = s.q99[j] - s.q01[j];
    y[i] = span > 0 ? 2.0 * (x[i] - s.q01[j]) / span - 1.0 : 0.0;
  }
  return y;
}

/// Inverse of normalize; degenerate dims return q01.
inline std::vector<double> denormalize(const std::vector<double>& y, const DimStats& s) {
  const std::size_t d = s.dims();
  if (d == 0 || y.size() % d != 0) throw ShapeError("denormalize: dims do not match statistics");
  std::vector<double> x(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t j = i % d;
    const double span = s.q99[j] - s.q01[j];
    x[i] = span > 0 ? (y[i] + 1.0) * 0.5 * span + s.q01[j] : s.q01[j];
  }
  return x;
}

inline nlohmann::json to_json(const DimStats& s) { return {{"q01", s.q01}, {"q99", s.q99}}; }
inline DimStats dim_stats_from_json(const nlohmann::json& j) {
  DimStats s;
  s.q01 = j.at("q01").get<std::vector<double>>();
  s.q99 = j.at("q99").get<std::vector<double>>();
  if (s.q01.size() != s.q99.size()) throw FormatError("norm stats: q01/q99 length mismatch");
  for (std::size_t i = 0; i < s.q01.size(); ++i) {
    if (s.q01[i] > s.q99[i]) throw FormatError("norm stats: q01 > q99");
  }
  return s;
}
inline nlohmann::json to_json(const NormStats& s) {
  return {{"state", to_json(s.state)}, {"action", to_json(s.action)}, {"physics", to_json(s.physics)}};
}
inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  return {dim_stats_from_json(j.at("state")), dim_stats_from_json(j.at("action")),
          dim_stats_from_json(j.at("physics"))};
}

enum class TauMode { kUniform, kBeta };

struct TauSchedule {
  TauMode mode = TauMode::kBeta;
  std::size_t steps = 4;  // inference grid size T
};

/// Uniform on [0,1) or Beta(1.5, 1) by inverse CDF (x = u^(1/1.5)).
inline double sample_tau(const TauSchedule& sched, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  if (sched.mode == TauMode::kUniform) return x;
  return std::pow(x, 1.0 / 1.5);
}

/// tau*x + (1-tau)*eps.
inline Tensor make_noisy(const Tensor& x, const Tensor& eps, double tau) {
  if (x.shape() != eps.shape()) throw ShapeError("make_noisy: shapes differ");
  return add(scale(x, tau), scale(eps, 1.0 - tau));
}

inline Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = stddev * n(rng);
  return Tensor::from_vector(std::move(shape), std::move(v));
}

/// Model outputs for a flow step.
struct Field {
  Tensor action;
  Tensor physics;  // undefined when the model has no physics stream
};

/// One training example: clean normalized targets.
struct FlowTarget {
  Tensor action;         // [H+1, a]
  Tensor physics;        // [L, p] or undefined
};

/// Velocity model: (noisy action, noisy physics or undefined, tau) -> field.
using FieldFn = std::function<Field(const Tensor&, const Tensor&, double)>;

/// ||v_a - (a - eps)||^2 + lambda_p ||v_p - (p - eps_p)||^2 for one sample.
inline Tensor fm_term(const Field& out, const FlowTarget& target, const Tensor& eps, const Tensor& eps_p,
                      double lambda_p) {
  Tensor da = sub(out.action, sub(target.action, eps));
  Tensor loss = sum(mul(da, da));
  if (target.physics.defined() && out.physics.defined()) {
    Tensor dp = sub(out.physics, sub(target.physics, eps_p));
    loss = add(loss, scale(sum(mul(dp, dp)), lambda_p));
  }
  return loss;
}

/// Draws tau/eps per element, runs the model and returns the batch-mean loss.
inline Tensor fm_loss(const std::vector<FieldFn>& models, const std::vector<FlowTarget>& batch, double lambda_p,
                      const TauSchedule& sched, std::mt19937_64& rng) {
  if (models.size() != batch.size() || batch.empty()) throw ContractError("fm_loss: batch/model count mismatch");
  Tensor total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double tau = sample_tau(sched, rng);
    Tensor eps = gaussian(batch[i].action.shape(), 1.0, rng);
    Tensor eps_p;
    Tensor p_tau;
    if (batch[i].physics.defined()) {
      eps_p = gaussian(batch[i].physics.shape(), 1.0, rng);
      p_tau = make_noisy(batch[i].physics, eps_p, tau);
    }
    Field out = models[i](make_noisy(batch[i].action, eps, tau), p_tau, tau);
    Tensor term = fm_term(out, batch[i], eps, eps_p, lambda_p);
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / double(batch.size()));
}

struct SampleResult {
  Tensor action;   // normalized chunk
  Tensor physics;  // normalized forecast or undefined
};

/// Euler integration on the grid tau_i = i/T, i = 0..T-1, from the given initial noise.
inline SampleResult euler_integrate(const FieldFn& model, Tensor a, Tensor p, std::size_t T) {
  if (T < 1) throw ConfigError("euler_sample: T must be >= 1");
  const double dt = 1.0 / double(T);
  for (std::size_t i = 0; i < T; ++i) {
    const double tau = double(i) / double(T);
    Field v = model(a, p, tau);
    a = add(a, scale(v.action, dt));
    if (p.defined() && v.physics.defined()) p = add(p, scale(v.physics, dt));
  }
  return {a, p};
}

/// Samples a0 ~ N(0, temperature^2 I) (and physics noise when `physics_shape` is non-empty) then integrates.
inline SampleResult euler_sample(const FieldFn& model, const Shape& action_shape, const Shape& physics_shape,
                                 std::size_t T, double temperature, std::mt19937_64& rng) {
  if (!(temperature > 0)) throw ConfigError("euler_sample: temperature must be positive");
  Tensor a = gaussian(action_shape, temperature, rng);
  Tensor p;
  if (!physics_shape.empty()) p = gaussian(physics_shape, temperature, rng);
  return euler_integrate(model, a, p, T);
}

}  // namespace rldx::flow
