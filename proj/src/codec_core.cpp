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

#include "mtac/codec_core.hpp"

#include <mutex>
#include <tuple>

namespace mtac {

void StageConfig::validate() const {
  if (num_stages <= 0)
    throw ConfigError("num_stages must be positive, got " +
                      std::to_string(num_stages));
  if (static_cast<int>(channels_per_stage.size()) != num_stages)
    throw ConfigError("channels_per_stage must list " + std::to_string(num_stages) +
                      " widths, got " + std::to_string(channels_per_stage.size()));
  for (int c : channels_per_stage)
    if (c <= 0) throw ConfigError("channels_per_stage entries must be > 0");
  if (static_cast<int>(decoder_channels.size()) != num_stages)
    throw ConfigError("decoder_channels must list " + std::to_string(num_stages) +
                      " widths, got " + std::to_string(decoder_channels.size()));
  for (int c : decoder_channels)
    if (c <= 0) throw ConfigError("decoder_channels entries must be > 0");
  if (window_size <= 0)
    throw ConfigError("window_size must be positive, got " +
                      std::to_string(window_size));
  if (latent_channels <= 0)
    throw ConfigError("latent_channels must be positive, got " +
                      std::to_string(latent_channels));
  if (static_cast<int>(encoder_mlp_ratio.size()) != num_stages ||
      static_cast<int>(decoder_mlp_ratio.size()) != num_stages)
    throw ConfigError("mlp ratio lists must have one entry per stage");
  if (entropy_support <= 0 || entropy_support > 1024)
    throw ConfigError("entropy_support out of range: " +
                      std::to_string(entropy_support));
}

namespace {

struct IndexCache {
  std::mutex mu;
  std::map<std::tuple<int, int, int, int, bool>,
           std::shared_ptr<const std::vector<std::int64_t>>>
      maps;
};

IndexCache& index_cache() {
  static IndexCache c;
  return c;
}

std::shared_ptr<const std::vector<std::int64_t>> window_map(int h, int w, int c,
                                                            int win, bool merge) {
  auto& cache = index_cache();
  std::scoped_lock lock(cache.mu);
  auto key = std::make_tuple(h, w, c, win, merge);
  auto it = cache.maps.find(key);
  if (it != cache.maps.end()) return it->second;

  auto idx = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(h) * w * c);
  int wx_count = w / win;
  // partition: out[window-major token, c] = in[(y, x), c]
  std::int64_t o = 0;
  for (int wy = 0; wy < h / win; ++wy)
    for (int wx = 0; wx < wx_count; ++wx)
      for (int ty = 0; ty < win; ++ty)
        for (int tx = 0; tx < win; ++tx) {
          std::int64_t src =
              (static_cast<std::int64_t>(wy * win + ty) * w + (wx * win + tx)) * c;
          for (int cc = 0; cc < c; ++cc) (*idx)[o++] = src + cc;
        }
  if (merge) {
    // invert the bijection
    auto inv = std::make_shared<std::vector<std::int64_t>>(idx->size());
    for (std::size_t i = 0; i < idx->size(); ++i) (*inv)[(*idx)[i]] = static_cast<std::int64_t>(i);
    cache.maps.emplace(key, inv);
    return inv;
  }
  cache.maps.emplace(key, idx);
  return idx;
}

}  // namespace

std::shared_ptr<const std::vector<std::int64_t>> window_partition_indices(int h, int w,
                                                                          int c, int win) {
  return window_map(h, w, c, win, false);
}

std::shared_ptr<const std::vector<std::int64_t>> window_merge_indices(int h, int w,
                                                                      int c, int win) {
  return window_map(h, w, c, win, true);
}

}  // namespace mtac
