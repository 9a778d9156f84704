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

// Value learning for post-training: expectile regression, HL-Gaussian
// categorical heads, a progress critic and a twin-Q chunk critic.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rldx/numerics/autograd.hpp"
#include "rldx/numerics/ops.hpp"
#include "rldx/numerics/optim.hpp"
#include "rldx/numerics/params.hpp"

namespace rldx::rl {

// ---------------------------------------------------------------- expectile

/// |rho - 1[u<0]| * u^2.
inline double expectile_loss(double u, double rho) {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("expectile: rho must lie in (0,1)");
  return std::abs(rho - (u < 0 ? 1.0 : 0.0)) * u * u;
}

/// Mean expectile loss over the elements of u; the asymmetric weights are constants.
inline Tensor expectile_loss(const Tensor& u, double rho) {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("expectile: rho must lie in (0,1)");
  std::vector<double> w(u.numel());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = u.values()[i] < 0 ? 1.0 - rho : rho;
  return mean(mul(Tensor::from_vector(u.shape(), std::move(w)), mul(u, u)));
}

/// Scalar expectile of a sample fitted by gradient descent on the expectile loss.
inline double fit_expectile(const std::vector<double>& ys, double rho, std::size_t steps = 4000, double lr = 0.05) {
  if (ys.empty()) throw ContractError("fit_expectile: empty sample");
  ParamStore ps;
  double m0 = 0;
  for (double y : ys) m0 += y;
  ps.add("m", Tensor::parameter({1}, {m0 / double(ys.size())}));
  Tensor y = Tensor::from_vector({ys.size()}, ys);
  AdamW opt({0.9, 0.999, 1e-12, 0.0, 0.0});
  for (std::size_t s = 0; s < steps; ++s) {
    ps.zero_grad();
    Tensor loss = expectile_loss(sub(y, ps["m"]), rho);
    backward(loss);
    opt.step(ps, lr * (1.0 - double(s) / double(steps)) + 1e-6);
  }
  return ps["m"].item();
}

// ---------------------------------------------------------------- HL-Gaussian

/// Uniform atoms with Gaussian smoothing of width sigma (in bin widths).
struct Support {
  std::vector<double> atoms;
  double width = 1.0;
  double sigma = 0.75;  // absolute

  static Support uniform(double lo, double hi, std::size_t n, double sigma_bins) {
    if (n < 2 || !(hi > lo)) throw ConfigError("support: need n >= 2 and hi > lo");
    Support s;
    s.width = (hi - lo) / double(n - 1);
    for (std::size_t k = 0; k < n; ++k) s.atoms.push_back(lo + double(k) * s.width);
    s.sigma = sigma_bins * s.width;
    return s;
  }
  /// 101 atoms on [-100, 0], sigma 0.75 bins.
  static Support value_default() { return uniform(-100.0, 0.0, 101, 0.75); }
  /// 101 integer buckets 0..100 for progress.
  static Support progress_default() { return uniform(0.0, 100.0, 101, 0.75); }
  std::size_t size() const { return atoms.size(); }
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Gaussian mass per bin [atom - w/2, atom + w/2]; the end bins absorb the tails.
inline std::vector<double> hl_project(double y, const Support& s) {
  if (!(y >= s.atoms.front() - 3 * s.sigma && y <= s.atoms.back() + 3 * s.sigma)) {
    throw ContractError("hl_project: target outside the support");
  }
  const std::size_t n = s.size();
  std::vector<double> p(n);
  double prev = 0.0;  // CDF at the lower edge of bin 0 (treated as -inf)
  for (std::size_t k = 0; k < n; ++k) {
    const double cdf = k + 1 == n ? 1.0 : normal_cdf((s.atoms[k] + 0.5 * s.width - y) / s.sigma);
    p[k] = cdf - prev;
    prev = cdf;
  }
  double total = 0;
  for (double v : p) total += v;
  for (double& v : p) v /= total;
  return p;
}

inline double hl_decode(const std::vector<double>& probs, const Support& s) {
  if (probs.size() != s.size()) throw ShapeError("hl_decode: probability/atom count mismatch");
  double v = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) v += probs[k] * s.atoms[k];
  return v;
}

/// Expected atom value of softmax(logits) per row: [B, n] -> [B, 1].
inline Tensor hl_decode(const Tensor& logits, const Support& s) {
  Tensor atoms = Tensor::from_vector({s.size(), 1}, s.atoms);
  return matmul(softmax(logits, 1), atoms);
}

/// Mean cross-entropy of logits [B, n] against target distributions [B, n].
inline Tensor cross_entropy(const Tensor& logits, const Tensor& target) {
  const double rows = double(logits.numel() / logits.shape().back());
  return scale(sum(mul(target, log_softmax(logits))), -1.0 / rows);
}

// ---------------------------------------------------------------- residual MLP

struct ResNetConfig {
  std::size_t in = 1;
  std::size_t width = 64;
  std::size_t blocks = 4;
  std::size_t out = 101;
  double eps = 1e-6;
};

/// Input projection, pre-norm residual SwiGLU blocks, normed output projection.
inline void init_resnet(ParamStore& ps, const std::string& p, const ResNetConfig& c, std::mt19937_64& rng) {
  ps.add(p + "in.w", init::linear_weight(c.in, c.width, rng));
  ps.add(p + "in.b", init::zeros({c.width}));
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::string q = p + "b" + std::to_string(b) + ".";
    ps.add(q + "norm", init::ones({c.width}));
    ps.add(q + "w1", init::linear_weight(c.width, 2 * c.width, rng));
    ps.add(q + "w2", init::linear_weight(c.width, c.width, rng, 0.5));
  }
  ps.add(p + "norm", init::ones({c.width}));
  ps.add(p + "out.w", init::linear_weight(c.width, c.out, rng, 0.5));
  ps.add(p + "out.b", init::zeros({c.out}));
}

inline Tensor resnet(const Tensor& x, const ParamStore& ps, const std::string& p, const ResNetConfig& c) {
  Tensor h = add(matmul(x, ps[p + "in.w"]), ps[p + "in.b"]);
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::string q = p + "b" + std::to_string(b) + ".";
    h = add(h, matmul(swiglu(matmul(rmsnorm(h, ps[q + "norm"], c.eps), ps[q + "w1"])), ps[q + "w2"]));
  }
  return add(matmul(rmsnorm(h, ps[p + "norm"], c.eps), ps[p + "out.w"]), ps[p + "out.b"]);
}

inline Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ContractError("empty batch");
  const std::size_t d = rows.front().size();
  std::vector<double> v;
  v.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw ShapeError("ragged batch rows");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor::from_vector({rows.size(), d}, std::move(v));
}

// ---------------------------------------------------------------- progress critic

/// Target bucket for step t of a successful episode of length T.
inline int progress_target(std::size_t t, std::size_t T) {
  if (T == 0) throw ContractError("progress target for an empty episode");
  return int(std::lround(100.0 * double(std::min(t, T)) / double(T)));
}

struct CriticTrainConfig {
  std::size_t steps = 1500;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/// 101-way classifier over integer progress 0..100 from (pooled cognition, state) features.
class ProgressCritic {
 public:
  ProgressCritic() = default;
  ProgressCritic(std::size_t in_dim, std::uint64_t seed, std::size_t width = 64, std::size_t blocks = 2) {
    cfg_ = {in_dim, width, blocks, 101, 1e-6};
    std::mt19937_64 rng(seed);
    init_resnet(ps_, "prog.", cfg_, rng);
  }

  std::size_t in_dim() const { return cfg_.in; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  Tensor logits(const Tensor& x) const { return resnet(x, ps_, "prog.", cfg_); }

  std::vector<double> probs(const std::vector<double>& x) const {
    NoGradGuard ng;
    return softmax(logits(Tensor::from_vector({1, x.size()}, x)), 1).values();
  }

  double value(const std::vector<double>& x) const {
    return hl_decode(probs(x), Support::progress_default());
  }

  /// Cross-entropy to the progress bucket of each step; `episodes[i][t]` is the feature of step t.
  std::vector<double> train(const std::vector<std::vector<std::vector<double>>>& episodes, const CriticTrainConfig& c) {
    std::vector<std::pair<std::size_t, std::size_t>> index;
    for (std::size_t e = 0; e < episodes.size(); ++e)
      for (std::size_t t = 0; t < episodes[e].size(); ++t) index.push_back({e, t});
    if (index.empty()) throw ContractError("progress critic needs successful demonstrations");
    std::mt19937_64 rng(c.seed);
    AdamW opt;
    std::vector<double> losses;
    for (std::size_t s = 0; s < c.steps; ++s) {
      std::vector<std::vector<double>> xs, ys;
      for (std::size_t b = 0; b < c.batch; ++b) {
        auto [e, t] = index[std::uniform_int_distribution<std::size_t>(0, index.size() - 1)(rng)];
        xs.push_back(episodes[e][t]);
        std::vector<double> onehot(101, 0.0);
        onehot[std::size_t(progress_target(t, episodes[e].size()))] = 1.0;
        ys.push_back(std::move(onehot));
      }
      ps_.zero_grad();
      Tensor loss = cross_entropy(logits(rows_tensor(xs)), rows_tensor(ys));
      backward(loss);
      opt.step(ps_, lr_at(s, c.steps, c.lr, 0.05, LrSchedule::kCosine));
      losses.push_back(loss.item());
    }
    return losses;
  }

 private:
  ResNetConfig cfg_;
  ParamStore ps_;
};

struct AdvantageLabels {
  std::vector<std::vector<int>> bits;      // per episode, per step
  std::vector<std::vector<double>> delta;  // raw progress gain
  double threshold = 0.0;                  // median delta
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& b : bits) n += b.size();
    return n;
  }
};

/// Delta_t = V(min(t+H+1, T-1)) - V(t); bit = Delta_t > median (ties negative).
inline AdvantageLabels annotate_advantages(const std::vector<std::vector<double>>& values, std::size_t H) {
  AdvantageLabels out;
  std::vector<double> all;
  for (const auto& v : values) {
    std::vector<double> d(v.size());
    for (std::size_t t = 0; t < v.size(); ++t) d[t] = v[std::min(t + H + 1, v.size() - 1)] - v[t];
    all.insert(all.end(), d.begin(), d.end());
    out.delta.push_back(std::move(d));
  }
  if (!all.empty()) {
    std::sort(all.begin(), all.end());
    const std::size_t n = all.size();
    out.threshold = n % 2 ? all[n / 2] : 0.5 * (all[n / 2 - 1] + all[n / 2]);
  }
  for (const auto& d : out.delta) {
    std::vector<int> b(d.size());
    for (std::size_t t = 0; t < d.size(); ++t) b[t] = d[t] > out.threshold ? 1 : 0;
    out.bits.push_back(std::move(b));
  }
  return out;
}

inline AdvantageLabels annotate_advantages(const ProgressCritic& critic,
                                           const std::vector<std::vector<std::vector<double>>>& features,
                                           std::size_t H) {
  std::vector<std::vector<double>> values;
  for (const auto& ep : features) {
    std::vector<double> v;
    for (const auto& x : ep) v.push_back(critic.value(x));
    values.push_back(std::move(v));
  }
  return annotate_advantages(values, H);
}

// ---------------------------------------------------------------- chunk critic

struct ChunkCriticConfig {
  std::size_t obs_dim = 1;
  std::size_t chunk_dim = 1;
  std::size_t width = 64;
  std::size_t blocks = 4;
  double gamma1 = 0.9;
  double gamma2 = 0.99;
  double rho = 0.7;
  double polyak = 0.005;
  double lr = 1e-3;
  std::size_t chunk_len = 8;  // H+1

  void validate() const {
    if (!(rho > 0 && rho < 1)) throw ConfigError("chunk critic: rho must lie in (0,1)");
    if (!(polyak > 0 && polyak <= 1)) throw ConfigError("chunk critic: polyak rate must lie in (0,1]");
  }
};

/// One chunk transition: features at t, flattened normalized chunk, shifted chunk return, features at t+H+1.
struct ChunkTransition {
  std::vector<double> obs;
  std::vector<double> chunk;
  double ret = 0.0;
  std::vector<double> next_obs;
  bool terminal = false;
};

/// Sum_{i=0}^{H} gamma1^i r_{t+i} over shifted rewards (r - 1); steps past the end contribute 0.
inline double chunk_return(const std::vector<double>& rewards, std::size_t t, std::size_t len, double gamma1) {
  double g = 0, w = 1;
  for (std::size_t i = 0; i < len && t + i < rewards.size(); ++i) {
    g += w * (rewards[t + i] - 1.0);
    w *= gamma1;
  }
  return g;
}

/// Expectile V and twin distributional Q with Polyak-averaged target Q copies.
class ChunkCritic {
 public:
  ChunkCritic() = default;
  ChunkCritic(ChunkCriticConfig cfg, std::uint64_t seed) : cfg_(cfg), support_(Support::value_default()) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    init_resnet(ps_, "v.", vcfg(), rng);
    init_resnet(ps_, "q1.", qcfg(), rng);
    init_resnet(ps_, "q2.", qcfg(), rng);
    target_ = ps_.clone();
  }

  const ChunkCriticConfig& config() const { return cfg_; }
  const Support& support() const { return support_; }
  ParamStore& params() { return ps_; }
  ParamStore& target_params() { return target_; }

  Tensor v_logits(const Tensor& obs) const { return resnet(obs, ps_, "v.", vcfg()); }
  Tensor q_logits(const Tensor& obs_chunk, int which, bool target = false) const {
    return resnet(obs_chunk, target ? target_ : ps_, which == 1 ? "q1." : "q2.", qcfg());
  }

  double value(const std::vector<double>& obs) const {
    NoGradGuard ng;
    return hl_decode(v_logits(Tensor::from_vector({1, obs.size()}, obs)), support_).item();
  }
  std::pair<double, double> q_values(const std::vector<double>& obs, const std::vector<double>& chunk,
                                     bool target = false) const {
    NoGradGuard ng;
    Tensor x = Tensor::from_vector({1, obs.size() + chunk.size()}, concat_vec(obs, chunk));
    return {hl_decode(q_logits(x, 1, target), support_).item(), hl_decode(q_logits(x, 2, target), support_).item()};
  }
  /// min(Q1, Q2): the score used for selection.
  double score(const std::vector<double>& obs, const std::vector<double>& chunk) const {
    auto [a, b] = q_values(obs, chunk);
    return std::min(a, b);
  }

  /// target <- target + rate * (online - target) for the Q networks.
  void polyak_update() {
    for (auto& [name, t] : target_) {
      if (name.rfind("q", 0) != 0) continue;
      auto dst = t.mutable_data();
      const auto& src = ps_[name].values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += cfg_.polyak * (src[i] - dst[i]);
    }
  }

  /// One update of V (expectile toward min target Q) and both Q (cross-entropy to the HL projection
  /// of r_chunk + gamma2 V(s')); returns {v_loss, q_loss}.
  std::pair<double, double> update(const std::vector<ChunkTransition>& batch, AdamW& opt) {
    std::vector<std::vector<double>> obs, oc, nxt;
    for (const auto& tr : batch) {
      obs.push_back(tr.obs);
      oc.push_back(concat_vec(tr.obs, tr.chunk));
      nxt.push_back(tr.next_obs);
    }
    Tensor x_obs = rows_tensor(obs), x_oc = rows_tensor(oc);
    std::vector<double> q_min(batch.size()), v_next;
    std::vector<std::vector<double>> targets;
    {
      NoGradGuard ng;
      Tensor q1 = hl_decode(q_logits(x_oc, 1, true), support_);
      Tensor q2 = hl_decode(q_logits(x_oc, 2, true), support_);
      for (std::size_t i = 0; i < batch.size(); ++i) q_min[i] = std::min(q1.values()[i], q2.values()[i]);
      v_next = hl_decode(v_logits(rows_tensor(nxt)), support_).values();
      const double lo = support_.atoms.front(), hi = support_.atoms.back();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const double y = batch[i].ret + (batch[i].terminal ? 0.0 : cfg_.gamma2 * v_next[i]);
        targets.push_back(hl_project(std::clamp(y, lo, hi), support_));
      }
    }
    ps_.zero_grad();
    Tensor v = hl_decode(v_logits(x_obs), support_);
    Tensor v_loss = expectile_loss(sub(Tensor::from_vector({batch.size(), 1}, q_min), v), cfg_.rho);
    Tensor tgt = rows_tensor(targets);
    Tensor q_loss = add(cross_entropy(q_logits(x_oc, 1), tgt), cross_entropy(q_logits(x_oc, 2), tgt));
    Tensor loss = add(v_loss, q_loss);
    backward(loss);
    opt.step(ps_, cfg_.lr);
    polyak_update();
    return {v_loss.item(), q_loss.item()};
  }

  std::vector<std::pair<double, double>> train(const std::vector<ChunkTransition>& data, std::size_t steps,
                                               std::size_t batch, std::uint64_t seed) {
    if (data.empty()) throw ContractError("chunk critic needs transitions");
    std::mt19937_64 rng(seed);
    AdamW opt;
    std::vector<std::pair<double, double>> out;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<ChunkTransition> b;
      for (std::size_t i = 0; i < batch; ++i) {
        b.push_back(data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)]);
      }
      out.push_back(update(b, opt));
    }
    return out;
  }

 private:
  static std::vector<double> concat_vec(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> v(a);
    v.insert(v.end(), b.begin(), b.end());
    return v;
  }
  ResNetConfig vcfg() const { return {cfg_.obs_dim, cfg_.width, cfg_.blocks, support_.size(), 1e-6}; }
  ResNetConfig qcfg() const { return {cfg_.obs_dim + cfg_.chunk_dim, cfg_.width, cfg_.blocks, support_.size(), 1e-6}; }

  ChunkCriticConfig cfg_;
  Support support_;
  ParamStore ps_;
  ParamStore target_;
};

// ---------------------------------------------------------------- best-of-N

struct BestOfN {
  std::size_t index = 0;
  Tensor chunk;
  std::vector<double> scores;
};

/// Draws N chunks from `sample` (in order, sharing the caller's rng stream) and keeps the highest score;
/// ties go to the lowest index.
inline BestOfN best_of_n(const std::function<Tensor(std::mt19937_64&)>& sample,
                         const std::function<double(const Tensor&)>& score, std::size_t N, std::mt19937_64& rng) {
  if (N < 1) throw ConfigError("best_of_n: N must be >= 1");
  BestOfN out;
  for (std::size_t i = 0; i < N; ++i) {
    Tensor c = sample(rng);
    const double s = score(c);
    out.scores.push_back(s);
    if (i == 0 || s > out.scores[out.index]) {
      out.index = i;
      out.chunk = c;
    }
  }
  return out;
}

}  // namespace rldx::rl
