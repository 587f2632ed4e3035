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

#include "mtac/params.hpp"

#include <fstream>

namespace mtac {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'C', 'K'};

template <class V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& is, const std::string& what) {
  V v;
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw FormatError("checkpoint truncated while reading " + what);
  return v;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  put(os, version);
  put(os, static_cast<std::uint64_t>(config_json.size()));
  os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  put(os, static_cast<std::uint64_t>(params.entries().size()));
  for (const auto& [name, p] : params.entries()) {
    put(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(os, static_cast<std::uint8_t>(p.frozen ? 1 : 0));
    put(os, static_cast<std::uint8_t>(p.value.rank()));
    for (int d : p.value.dims) put(os, static_cast<std::int32_t>(d));
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4))
    throw FormatError("not a checkpoint file (bad magic): " + path);
  Checkpoint ck;
  ck.version = get<std::uint32_t>(is, "version");
  if (ck.version != 1)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(ck.version));
  auto cfg_len = get<std::uint64_t>(is, "config length");
  ck.config_json.resize(cfg_len);
  is.read(ck.config_json.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw FormatError("checkpoint truncated in config echo");
  auto count = get<std::uint64_t>(is, "parameter count");
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name_len = get<std::uint16_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw FormatError("checkpoint truncated in parameter name");
    auto frozen = get<std::uint8_t>(is, "frozen flag");
    auto rank = get<std::uint8_t>(is, "rank");
    std::vector<int> dims(rank);
    for (auto& d : dims) d = get<std::int32_t>(is, "dimension");
    Tensor<double> t(dims);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw FormatError("checkpoint truncated in parameter data");
    ck.params.add(name, std::move(t), frozen != 0);
  }
  return ck;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open file for hashing: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

}  // namespace mtac
