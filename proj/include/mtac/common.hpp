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

#ifndef MTAC_COMMON_HPP_
#define MTAC_COMMON_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mtac {

// Error taxonomy. The CLI maps these onto process exit codes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DecodeError : std::runtime_error {
  DecodeError(const std::string& msg, std::uint64_t offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::uint64_t byte_offset = 0;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LookupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EvalInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a, used for checkpoint integrity hashes and seed derivation.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

// Derives an independent stream seed from a root seed and a label. Keeps
// every random decision in the pipeline reproducible from one root seed.
inline std::uint64_t derive_seed(std::uint64_t root, const std::string& label) {
  std::uint64_t h = fnv1a64(&root, sizeof(root));
  return fnv1a64(label, h);
}

inline std::uint64_t derive_seed(std::uint64_t root, const std::string& label,
                                 std::uint64_t index) {
  std::uint64_t h = derive_seed(root, label);
  return fnv1a64(&index, sizeof(index), h);
}

}  // namespace mtac

#endif  // MTAC_COMMON_HPP_
