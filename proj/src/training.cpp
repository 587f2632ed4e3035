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

#include "mtac/training.hpp"

#include <fstream>

namespace mtac {

void TrainConfig::validate() const {
  if (lambda_rd <= 0)
    throw ConfigError("lambda_rd must be > 0, got " + std::to_string(lambda_rd));
  if (lr <= 0) throw ConfigError("lr must be > 0");
  if (decay_factor <= 0 || decay_factor >= 1)
    throw ConfigError("decay_factor must lie in (0, 1)");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size <= 0) throw ConfigError("batch_size must be > 0");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
      throw ConfigError("decay_epochs must be strictly increasing");
    if (epochs > 0 && decay_epochs[i] >= epochs)
      throw ConfigError("decay_epochs entries must be < epochs");
  }
  if (mode == TrainMode::kSingletask && singletask_name.empty())
    throw ConfigError("singletask mode needs a task name");
  if (base_lambda <= 0) throw ConfigError("base_lambda must be > 0");
  if (predictor_loss_weight < 0)
    throw ConfigError("predictor_loss_weight must be >= 0");
  for (const auto& [k, w] : task_weights)
    if (w <= 0) throw ConfigError("task weight for '" + k + "' must be > 0");
}

double TrainConfig::lr_at_epoch(int epoch) const {
  double v = lr;
  for (int d : decay_epochs)
    if (epoch >= d) v *= decay_factor;
  return v;
}

void write_history_csv(const History& history, const std::vector<std::string>& tasks,
                       const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write history csv: " + path);
  os << "epoch,lr,loss_total,loss_rd,bpp,mse";
  for (const auto& t : tasks) os << "," << t << "_loss";
  for (const auto& t : tasks) os << "," << t << "_metric";
  os << "\n";
  os.precision(10);
  for (const auto& r : history) {
    os << r.epoch << "," << r.lr << "," << r.loss_total << "," << r.loss_rd << ","
       << r.bpp << "," << r.mse;
    for (const auto& t : tasks) {
      auto it = r.task_loss.find(t);
      os << "," << (it != r.task_loss.end() ? it->second : 0.0);
    }
    for (const auto& t : tasks) {
      auto it = r.task_metric.find(t);
      os << "," << (it != r.task_metric.end() ? it->second : 0.0);
    }
    os << "\n";
  }
}

}  // namespace mtac
