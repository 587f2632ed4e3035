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

#include "mtac/adaptation.hpp"

#include <iostream>
#include <mutex>
#include <set>

namespace mtac {

void AdaptConfig::validate() const {
  if (mask_size <= 0) throw ConfigError("mask_size must be positive");
  if (msf_dim <= 0) throw ConfigError("msf_dim must be positive");
  if (msf_window <= 0) throw ConfigError("msf_window must be positive");
  if (head_hidden <= 0) throw ConfigError("head_hidden must be positive");
}

namespace {
std::mutex g_mask_log_mu;
std::set<std::string> g_mask_log;
}  // namespace

void note_mask_resize(const std::string& adaptor_name, int h, int w) {
  std::scoped_lock lock(g_mask_log_mu);
  if (g_mask_log.insert(adaptor_name).second) {
    std::cerr << "[mtac] spectral mask of '" << adaptor_name
              << "' resized to match a " << h << "x" << w << " feature grid\n";
  }
}

std::size_t mask_resize_log_size() {
  std::scoped_lock lock(g_mask_log_mu);
  return g_mask_log.size();
}

}  // namespace mtac
