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

#ifndef MTAC_TASK_SPEC_HPP_
#define MTAC_TASK_SPEC_HPP_

#include <string>
#include <vector>

#include "mtac/common.hpp"

namespace mtac {

enum class LossKind { kCrossEntropy, kL1Depth, kCosineNormals, kBinaryCe };
enum class MetricKind { kMiou, kRmse, kAngularError, kMiouBinary };

// Declarative description of one downstream task.
struct TaskSpec {
  std::string name;
  int out_channels = 1;
  LossKind loss_kind = LossKind::kCrossEntropy;
  MetricKind metric_kind = MetricKind::kMiou;
  double weight = 1.0;

  bool higher_better() const {
    return metric_kind == MetricKind::kMiou || metric_kind == MetricKind::kMiouBinary;
  }

  void validate() const {
    if (name.empty()) throw ConfigError("task name must be non-empty");
    if (out_channels < 1)
      throw ConfigError("task '" + name + "' needs out_channels >= 1");
    if (weight <= 0)
      throw ConfigError("task '" + name + "' needs a positive weight");
  }
};

LossKind loss_kind_from_string(const std::string& s);
MetricKind metric_kind_from_string(const std::string& s);
std::string to_string(LossKind k);
std::string to_string(MetricKind k);

// The four-task desk roster: segmentation, saliency, depth, surface normals.
std::vector<TaskSpec> default_task_roster(int num_classes);

const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, const std::string& name);

}  // namespace mtac

#endif  // MTAC_TASK_SPEC_HPP_
