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

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rldx/numerics/tensor.hpp"

namespace rldx::trace {

using Attrs = std::map<std::string, double>;

/// Receives every primitive call made while installed on the current thread.
class Recorder {
 public:
  virtual ~Recorder() = default;
  virtual void record(std::string_view kind, const std::vector<Tensor>& inputs,
                      const std::vector<Tensor>& outputs, const Attrs& attrs) = 0;
  /// Called by operations that have no graph counterpart.
  virtual void reject(std::string_view op) = 0;
};

inline Recorder*& active_slot() {
  thread_local Recorder* slot = nullptr;
  return slot;
}

inline Recorder* active() { return active_slot(); }

/// Installs a recorder for the lifetime of the scope.
class Scope {
 public:
  explicit Scope(Recorder* r) : prev_(active_slot()) { active_slot() = r; }
  ~Scope() { active_slot() = prev_; }
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

 private:
  Recorder* prev_;
};

/// Name tag attached to nodes recorded while alive (e.g. "memory").
inline std::string& provenance_slot() {
  thread_local std::string tag;
  return tag;
}

class Provenance {
 public:
  explicit Provenance(std::string tag) : prev_(provenance_slot()) {
    provenance_slot() = std::move(tag);
  }
  ~Provenance() { provenance_slot() = prev_; }
  Provenance(const Provenance&) = delete;
  Provenance& operator=(const Provenance&) = delete;

 private:
  std::string prev_;
};

inline void record(std::string_view kind, const std::vector<Tensor>& inputs,
                   const std::vector<Tensor>& outputs, const Attrs& attrs = {}) {
  if (auto* r = active()) r->record(kind, inputs, outputs, attrs);
}

inline void reject(std::string_view op) {
  if (auto* r = active()) r->reject(op);
}

}  // namespace rldx::trace
