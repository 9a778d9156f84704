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

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rldx/numerics/tensor.hpp"

namespace rldx {

/// Name-ordered collection of trainable tensors.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  Tensor& add(const std::string& name, Tensor t) {
    if (map_.count(name)) throw ContractError("duplicate parameter name: " + name);
    if (!t.requires_grad()) t = Tensor::parameter(t.shape(), t.values());
    return map_.emplace(name, std::move(t)).first->second;
  }

  bool contains(const std::string& name) const { return map_.count(name) > 0; }

  const Tensor& get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  Tensor& get(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor& operator[](const std::string& name) const { return get(name); }

  /// Overwrites values in place (shape must match).
  void set_values(const std::string& name, const std::vector<double>& values) {
    Tensor& t = get(name);
    if (values.size() != t.numel()) throw ShapeError("set_values: size mismatch for " + name);
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  }

  void zero_grad() {
    for (auto& [_, t] : map_) t.zero_grad();
  }

  std::size_t size() const { return map_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : map_) n += t.numel();
    return n;
  }

  Map::iterator begin() { return map_.begin(); }
  Map::iterator end() { return map_.end(); }
  Map::const_iterator begin() const { return map_.begin(); }
  Map::const_iterator end() const { return map_.end(); }

  /// Deep copy with fresh storage.
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [k, t] : map_) out.add(k, Tensor::parameter(t.shape(), t.values()));
    return out;
  }

 private:
  Map map_;
};

/// FNV-1a over the raw bytes of a tensor's values.
inline std::uint64_t hash_values(const Tensor& t, std::uint64_t h = 1469598103934665603ULL) {
  for (double v : t.data()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

/// Hash of all parameters whose names start with `prefix` (empty: all).
inline std::uint64_t hash_params(const ParamStore& ps, const std::string& prefix = "") {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [k, t] : ps) {
    if (k.rfind(prefix, 0) != 0) continue;
    for (char c : k) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h = hash_values(t, h);
  }
  return h;
}

namespace init {

inline std::vector<double> normal(std::size_t n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline std::vector<double> uniform(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

/// Weight [in, out] with std 1/sqrt(in).
inline Tensor linear_weight(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain = 1.0) {
  return Tensor::parameter({in, out}, normal(in * out, gain / std::sqrt(double(in)), rng));
}

inline Tensor zeros(Shape s) {
  const std::size_t n = numel_of(s);
  return Tensor::parameter(std::move(s), std::vector<double>(n, 0.0));
}

inline Tensor ones(Shape s) {
  const std::size_t n = numel_of(s);
  return Tensor::parameter(std::move(s), std::vector<double>(n, 1.0));
}

}  // namespace init

}  // namespace rldx
