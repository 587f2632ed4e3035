// Copyright (c) the mtac project authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MTAC_PARAMS_HPP_
#define MTAC_PARAMS_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mtac/common.hpp"
#include "mtac/tensor.hpp"

namespace mtac {

template <class T>
struct Param {
  Tensor<T> value;
  bool frozen = false;
};

// Named parameter map with a frozen mask. Iteration order is the sorted
// name order, which keeps optimizer traversal and hashing deterministic.
template <class T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> init, bool frozen = false) {
    auto [it, inserted] = entries_.emplace(name, Param<T>{std::move(init), frozen});
    if (!inserted) throw ConfigError("duplicate parameter name: " + name);
    return it->second.value;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Param<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw LookupError("unknown parameter: " + name);
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw LookupError("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, Param<T>>& entries() { return entries_; }
  const std::map<std::string, Param<T>>& entries() const { return entries_; }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& [k, p] : entries_) n += p.value.size();
    return n;
  }
  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const auto& [k, p] : entries_)
      if (!p.frozen) n += p.value.size();
    return n;
  }

  void freeze_all(bool frozen = true) {
    for (auto& [k, p] : entries_) p.frozen = frozen;
  }
  void freeze_prefix(const std::string& prefix, bool frozen = true) {
    for (auto& [k, p] : entries_)
      if (k.rfind(prefix, 0) == 0) p.frozen = frozen;
  }

  // Hash of names, shapes and values (as doubles). Independent of the
  // in-memory scalar type only when values are exactly representable, so
  // checkpoint identity checks hash the file bytes instead; this hash is for
  // in-process invariance checks.
  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, p] : entries_) {
      h = fnv1a64(k, h);
      for (int d : p.value.dims) h = fnv1a64(&d, sizeof(d), h);
      for (const T& x : p.value.v) {
        double xd = static_cast<double>(x);
        h = fnv1a64(&xd, sizeof(xd), h);
      }
    }
    return h;
  }

  std::uint64_t frozen_subset_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, p] : entries_) {
      if (!p.frozen) continue;
      h = fnv1a64(k, h);
      for (const T& x : p.value.v) {
        double xd = static_cast<double>(x);
        h = fnv1a64(&xd, sizeof(xd), h);
      }
    }
    return h;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, p] : entries_)
      out.add(k, p.value.template cast<U>(), p.frozen);
    return out;
  }

 private:
  std::map<std::string, Param<T>> entries_;
};

// Checkpoint container: versioned named-array map plus a JSON config echo.
// Values are serialized as float64 regardless of the in-memory scalar type.
struct Checkpoint {
  std::uint32_t version = 1;
  std::string config_json;           // resolved config echo
  ParamStore<double> params;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// Hash of a checkpoint file's bytes; used for base-checkpoint identity.
std::uint64_t file_hash(const std::string& path);

}  // namespace mtac

#endif  // MTAC_PARAMS_HPP_
