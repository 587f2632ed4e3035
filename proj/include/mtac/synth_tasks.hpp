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

#ifndef MTAC_SYNTH_TASKS_HPP_
#define MTAC_SYNTH_TASKS_HPP_

#include <map>
#include <string>
#include <vector>

#include "mtac/autodiff.hpp"
#include "mtac/codec_core.hpp"
#include "mtac/optimizer.hpp"
#include "mtac/task_spec.hpp"
#include "mtac/tensor.hpp"

namespace mtac {

// One procedurally generated scene with aligned dense labels. Class ids are
// shape types (0 = background); saliency is the union of foreground shapes;
// normals are the analytic surface normals of the depth field.
struct Scene {
  Tensor<float> image;    // (h, w, 3) in [0, 1]
  Tensor<int> seg;        // (h, w)
  Tensor<int> sal;        // (h, w), 0/1
  Tensor<float> depth;    // (h, w), > 0
  Tensor<float> normals;  // (h, w, 3), unit length
};

Scene generate_scene(std::uint64_t seed, int h, int w, int num_shapes,
                     int num_classes);

struct DatasetConfig {
  int height = 64;
  int width = 64;
  int train_scenes = 512;
  int val_scenes = 128;
  int max_shapes = 5;
  int num_classes = 5;
  std::uint64_t split_seed = 17;
  std::string cache_dir;  // empty: no on-disk cache

  void validate() const;
};

struct Dataset {
  std::vector<Scene> train;
  std::vector<Scene> val;
};

// Pure function of the split seed; optionally backed by a versioned on-disk
// cache with one file per scene (regenerated on version mismatch).
Dataset make_dataset(const DatasetConfig& cfg);

void save_scene(const Scene& s, const std::string& path);
bool load_scene(const std::string& path, Scene* out);  // false: regenerate

// ---------------------------------------------------------------------------
// Losses and metrics on plain tensors (predictions at image resolution)
// ---------------------------------------------------------------------------

double task_loss(const Tensor<double>& pred, const Scene& scene, const TaskSpec& spec);
double task_metric(const Tensor<double>& pred, const Scene& scene, const TaskSpec& spec);

// Graph-side loss for training; `pred` is the head output (h, w, out_channels).
template <class T>
ag::Var<T> task_loss_graph(ag::Var<T> pred, const Scene& scene, const TaskSpec& spec) {
  int h = pred.dim(0), w = pred.dim(1);
  if (h != scene.seg.dim(0) || w != scene.seg.dim(1))
    throw ShapeError("prediction grid " + pred.val().shape_str() +
                     " does not match scene labels");
  switch (spec.loss_kind) {
    case LossKind::kCrossEntropy: {
      if (pred.dim(2) != spec.out_channels)
        throw ShapeError("segmentation head emitted " + std::to_string(pred.dim(2)) +
                         " channels, task expects " + std::to_string(spec.out_channels));
      return ag::cross_entropy_logits(pred, scene.seg);
    }
    case LossKind::kBinaryCe: {
      Tensor<T> tgt({h, w, 1});
      for (std::int64_t i = 0; i < tgt.size(); ++i)
        tgt.v[i] = static_cast<T>(scene.sal.v[i]);
      return ag::bce_logits(pred, tgt);
    }
    case LossKind::kL1Depth: {
      Tensor<T> tgt({h, w, 1});
      for (std::int64_t i = 0; i < tgt.size(); ++i)
        tgt.v[i] = static_cast<T>(scene.depth.v[i]);
      return ag::l1_loss(pred, pred.tape()->leaf(tgt));
    }
    case LossKind::kCosineNormals: {
      Tensor<T> tgt({h, w, 3});
      for (std::int64_t i = 0; i < tgt.size(); ++i)
        tgt.v[i] = static_cast<T>(scene.normals.v[i]);
      return ag::cosine_loss(pred, tgt);
    }
  }
  throw ConfigError("unhandled loss kind");
}

// ---------------------------------------------------------------------------
// Frozen downstream predictors (clean-image pretrained, used as supervision
// and as the task scorer for the untuned base codec)
// ---------------------------------------------------------------------------

template <class T>
void add_predictor(ParamStore<T>& ps, const std::string& task, int out_channels,
                   std::uint64_t seed) {
  std::string p = "pred." + task;
  add_conv(ps, p + ".c1", 3, 3, 3, 12, seed);
  add_conv(ps, p + ".c2", 3, 3, 12, 16, seed);
  add_conv(ps, p + ".c3", 3, 3, 16, 16, seed);
  add_linear(ps, p + ".out", 16, out_channels, seed);
}

template <class T>
ag::Var<T> predictor_forward(GraphCtx<T>& ctx, ag::Var<T> image, const std::string& task) {
  std::string p = "pred." + task;
  int h = image.dim(0), w = image.dim(1);
  auto y = ag::relu(ag::conv2d(image, ctx.P(p + ".c1.w"), ctx.P(p + ".c1.b"), 1, 1));
  y = ag::relu(ag::conv2d(y, ctx.P(p + ".c2.w"), ctx.P(p + ".c2.b"), 2, 1));
  y = ag::relu(ag::conv2d(y, ctx.P(p + ".c3.w"), ctx.P(p + ".c3.b"), 1, 1));
  y = ag::resize_bilinear(y, h, w);
  auto flat = ag::reshape(y, {h * w, 16});
  auto out = ag::bias_add(ag::matmul(flat, ctx.P(p + ".out.w")), ctx.P(p + ".out.b"));
  return ag::reshape(out, {h, w, out.dim(1)});
}

struct PredictorTrainOptions {
  int steps = 500;
  int batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 5;
  // Clean-image score each predictor must reach before being frozen.
  double seg_miou_floor = 0.7;
};

// Runs a clean-image prediction for one task (no tape kept).
template <class T>
Tensor<double> predict_plain(ParamStore<T>& preds, const Tensor<T>& image,
                             const std::string& task) {
  ag::Tape<T> tape(false);
  GraphCtx<T> ctx{tape, preds};
  auto out = predictor_forward(ctx, tape.leaf(image), task);
  return out.val().template cast<double>();
}

template <class T>
Tensor<T> scene_image(const Scene& s) {
  return s.image.template cast<T>();
}

// Pretrains one small conv predictor per task on clean scenes, then freezes
// them. Throws TrainingError if the segmentation floor is not met.
template <class T>
ParamStore<T> pretrain_predictors(const std::vector<Scene>& scenes,
                                  const std::vector<TaskSpec>& specs,
                                  const PredictorTrainOptions& opt = {}) {
  if (scenes.empty()) throw ConfigError("predictor pretraining needs scenes");
  ParamStore<T> ps;
  for (const auto& spec : specs)
    add_predictor(ps, spec.name, spec.out_channels,
                  derive_seed(opt.seed, "pred." + spec.name));
  for (const auto& spec : specs) {
    Adam<T> adam(opt.lr);
    std::mt19937_64 order(derive_seed(opt.seed, "pred.order." + spec.name));
    for (int step = 0; step < opt.steps; ++step) {
      std::map<std::string, Tensor<double>> grads;
      for (int b = 0; b < opt.batch_size; ++b) {
        const Scene& sc = scenes[order() % scenes.size()];
        ag::Tape<T> tape;
        GraphCtx<T> ctx{tape, ps};
        auto out = predictor_forward(ctx, tape.leaf(scene_image<T>(sc)), spec.name);
        auto loss = task_loss_graph(out, sc, spec);
        if (!std::isfinite(static_cast<double>(loss.val().v[0])))
          throw TrainingError("predictor '" + spec.name + "' diverged at step " +
                              std::to_string(step));
        tape.backward(loss);
        ctx.collect_grads(grads, 1.0 / opt.batch_size);
      }
      adam.step(ps, grads);
    }
  }
  // Clean-image floor check, then freeze.
  for (const auto& spec : specs) {
    if (spec.metric_kind != MetricKind::kMiou) continue;
    double acc = 0;
    for (const auto& sc : scenes)
      acc += task_metric(predict_plain(ps, scene_image<T>(sc), spec.name), sc, spec);
    acc /= static_cast<double>(scenes.size());
    if (acc <= opt.seg_miou_floor)
      throw TrainingError("predictor '" + spec.name + "' reached mIoU " +
                          std::to_string(acc) + " on clean scenes, below the " +
                          std::to_string(opt.seg_miou_floor) +
                          " floor; increase steps or capacity");
  }
  ps.freeze_all(true);
  return ps;
}

}  // namespace mtac

#endif  // MTAC_SYNTH_TASKS_HPP_
