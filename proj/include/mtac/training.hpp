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

#ifndef MTAC_TRAINING_HPP_
#define MTAC_TRAINING_HPP_

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "mtac/multitask.hpp"
#include "mtac/optimizer.hpp"
#include "mtac/synth_tasks.hpp"

namespace mtac {

enum class TrainMode { kMultitask, kSingletask };

struct TrainConfig {
  double lambda_rd = 1.0;
  double lr = 1e-4;
  std::vector<int> decay_epochs = {2, 4, 8};
  double decay_factor = 0.1;
  int epochs = 10;
  int batch_size = 8;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kMultitask;
  std::string singletask_name;                 // set when mode == kSingletask
  std::map<std::string, double> task_weights;  // overrides TaskSpec::weight
  // Weight on the frozen-predictor supervision of the shared reconstruction;
  // zero keeps the predictors out of the training graph.
  double predictor_loss_weight = 0.0;
  double base_lambda = 1.0;   // inner distortion weight, inherited from the base
  double mse_scale = 1000.0;  // distortion is mse_scale * MSE on [0,1] pixels
  int eval_scenes = 64;       // per-epoch validation subset

  void validate() const;
  double lr_at_epoch(int epoch) const;
  double weight_for(const TaskSpec& spec) const {
    auto it = task_weights.find(spec.name);
    return it != task_weights.end() ? it->second : spec.weight;
  }
};

struct LossParts {
  double total = 0, rd = 0, bpp = 0, mse = 0;
  std::map<std::string, double> task_losses;
};

// λ_rd * (bpp + λ * mse_scale * MSE(x, x_human)) + Σ w_i * L_i, with the rate
// term under train-mode quantization. When predictor_loss_weight > 0, each
// task adds w_i * pw * L_i(predictor_i(x_human)), which routes gradients
// through the frozen predictors into the codec.
template <class T>
std::pair<ag::Var<T>, LossParts> total_loss_graph(GraphCtx<T>& ctx, const Scene& scene,
                                                  AdaptedCodec<T>& codec,
                                                  const TrainConfig& cfg,
                                                  QuantizeMode mode,
                                                  std::mt19937_64* rng,
                                                  ParamStore<T>* predictors) {
  if (codec.tasks.empty()) throw ConfigError("total loss needs at least one task");
  auto image = ctx.tape.leaf(scene_image<T>(scene));
  auto enc = encode_fwd(ctx, image, codec, mode, rng);
  double npix = static_cast<double>(image.dim(0)) * image.dim(1);
  auto bpp = ag::affine(enc.bits, 1.0 / npix, 0.0);
  auto dec = decode_fwd(ctx, enc.y_hat, codec, codec.task_names());
  auto mse = ag::mse_loss(dec.x_human, image);
  auto rd = ag::add_scalars<T>(
      {bpp, ag::affine(mse, cfg.base_lambda * cfg.mse_scale, 0.0)});

  LossParts parts;
  parts.bpp = static_cast<double>(bpp.val().v[0]);
  parts.mse = static_cast<double>(mse.val().v[0]);
  parts.rd = static_cast<double>(rd.val().v[0]);

  std::vector<ag::Var<T>> terms{ag::affine(rd, cfg.lambda_rd, 0.0)};
  for (const auto& spec : codec.tasks) {
    auto l = task_loss_graph(dec.predictions.at(spec.name), scene, spec);
    parts.task_losses[spec.name] = static_cast<double>(l.val().v[0]);
    double w = cfg.weight_for(spec);
    auto term = ag::affine(l, w, 0.0);
    if (cfg.predictor_loss_weight > 0) {
      if (!predictors)
        throw ConfigError("predictor_loss_weight > 0 needs pretrained predictors");
      GraphCtx<T> pctx{ctx.tape, *predictors};
      auto pred_out = predictor_forward(pctx, dec.x_human, spec.name);
      auto pl = task_loss_graph(pred_out, scene, spec);
      term = ag::add_scalars<T>(
          {term, ag::affine(pl, w * cfg.predictor_loss_weight, 0.0)});
    }
    terms.push_back(term);
  }
  auto total = ag::add_scalars<T>(terms);
  parts.total = static_cast<double>(total.val().v[0]);
  return {total, parts};
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double loss_total = 0, loss_rd = 0, bpp = 0, mse = 0;
  std::map<std::string, double> task_loss;
  std::map<std::string, double> task_metric;  // validation subset
};

using History = std::vector<EpochRecord>;

void write_history_csv(const History& history, const std::vector<std::string>& tasks,
                       const std::string& path);

struct EvalSummary {
  double bpp_estimate = 0;
  double bpp_coded = 0;  // real range-coded bytes (full container) per pixel
  double mse = 0;
  std::map<std::string, double> metrics;
};

// Eval-mode pass over scenes: rounded latents, head predictions, true coded
// size from the range coder.
template <class T>
EvalSummary evaluate_codec(AdaptedCodec<T>& codec, const std::vector<Scene>& scenes,
                           int limit = -1) {
  EvalSummary s;
  int n = limit < 0 ? static_cast<int>(scenes.size())
                    : std::min<int>(limit, static_cast<int>(scenes.size()));
  if (n == 0) throw ConfigError("evaluation needs at least one scene");
  EntropyModel m = snapshot_entropy_model(codec.params, codec.stage.entropy_support);
  CodingTables tables = build_coding_tables(m);
  auto names = codec.task_names();
  for (int i = 0; i < n; ++i) {
    const Scene& sc = scenes[static_cast<std::size_t>(i)];
    auto r = run_codec(codec, scene_image<T>(sc), names);
    s.bpp_estimate += r.bpp_estimate;
    double npix = static_cast<double>(sc.image.dim(0)) * sc.image.dim(1);
    auto coded = encode_bitstream_with_tables(r.symbols, tables);
    s.bpp_coded += static_cast<double>(coded.stream.bytes.size()) * 8.0 / npix;
    s.mse += mse(r.x_human, scene_image<T>(sc));
    for (const auto& spec : codec.tasks)
      s.metrics[spec.name] += task_metric(r.predictions.at(spec.name), sc, spec);
  }
  s.bpp_estimate /= n;
  s.bpp_coded /= n;
  s.mse /= n;
  for (auto& [k, v] : s.metrics) v /= n;
  return s;
}

// The untuned frozen codec scored through the frozen predictors: encode and
// reconstruct with the base transforms, then run each task's predictor on
// the reconstruction.
template <class T>
EvalSummary evaluate_untuned_base(ParamStore<T>& base_params, const StageConfig& stage,
                                  const std::vector<Scene>& scenes,
                                  ParamStore<T>& predictors,
                                  const std::vector<TaskSpec>& tasks, int limit = -1) {
  EvalSummary s;
  int n = limit < 0 ? static_cast<int>(scenes.size())
                    : std::min<int>(limit, static_cast<int>(scenes.size()));
  if (n == 0) throw ConfigError("evaluation needs at least one scene");
  EntropyModel m = snapshot_entropy_model(base_params, stage.entropy_support);
  CodingTables tables = build_coding_tables(m);
  for (int i = 0; i < n; ++i) {
    const Scene& sc = scenes[static_cast<std::size_t>(i)];
    auto image = scene_image<T>(sc);
    ag::Tape<T> tape(false);
    GraphCtx<T> ctx{tape, base_params};
    auto a = analysis_fwd(ctx, tape.leaf(image), stage);
    auto y_hat = ag::round_ste(a.latent);
    auto bits = rate_bits(y_hat, ctx.P("entropy.mu"), ctx.P("entropy.log_scale"));
    auto syn = synthesis_fwd(ctx, y_hat, stage);
    double npix = static_cast<double>(image.dim(0)) * image.dim(1);
    s.bpp_estimate += static_cast<double>(bits.val().v[0]) / npix;
    auto symbols = latent_to_symbols(y_hat.val().template cast<double>());
    auto coded = encode_bitstream_with_tables(symbols, tables);
    s.bpp_coded += static_cast<double>(coded.stream.bytes.size()) * 8.0 / npix;
    s.mse += mse(syn.recon.val(), image);
    GraphCtx<T> pctx{tape, predictors};
    for (const auto& spec : tasks) {
      auto pred = predictor_forward(pctx, syn.recon, spec.name);
      s.metrics[spec.name] +=
          task_metric(pred.val().template cast<double>(), sc, spec);
    }
  }
  s.bpp_estimate /= n;
  s.bpp_coded /= n;
  s.mse /= n;
  for (auto& [k, v] : s.metrics) v /= n;
  return s;
}

// ---------------------------------------------------------------------------
// Adaptation training loop
// ---------------------------------------------------------------------------

template <class T>
History train_adaptation(AdaptedCodec<T>& codec, const Dataset& data,
                         const TrainConfig& cfg, ParamStore<T>* predictors = nullptr) {
  cfg.validate();
  if (cfg.mode == TrainMode::kSingletask) {
    if (codec.tasks.size() != 1 || codec.tasks[0].name != cfg.singletask_name)
      throw ConfigError("singletask training expects a codec built with exactly "
                        "the task '" + cfg.singletask_name + "'");
  }
  History history;
  Adam<T> adam(cfg.lr);
  std::uint64_t frozen_before = codec.params.frozen_subset_hash();
  int steps_per_epoch =
      (static_cast<int>(data.train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr_at_epoch(epoch);
    adam.set_lr(lr);
    std::mt19937_64 order_rng(derive_seed(cfg.seed, "adapt.order", epoch));
    std::mt19937_64 noise_rng(derive_seed(cfg.seed, "adapt.noise", epoch));
    std::vector<int> idx(data.train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::shuffle(idx.begin(), idx.end(), order_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    int seen = 0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::map<std::string, Tensor<double>> grads;
      int b0 = step * cfg.batch_size;
      int bs = std::min<int>(cfg.batch_size, static_cast<int>(idx.size()) - b0);
      if (bs <= 0) break;
      for (int b = 0; b < bs; ++b) {
        const Scene& sc = data.train[static_cast<std::size_t>(idx[b0 + b])];
        ag::Tape<T> tape;
        GraphCtx<T> ctx{tape, codec.params};
        auto [loss, parts] = total_loss_graph(ctx, sc, codec, cfg,
                                              QuantizeMode::kTrain, &noise_rng,
                                              predictors);
        if (!std::isfinite(parts.total))
          throw TrainingError("adaptation diverged at epoch " + std::to_string(epoch) +
                              " step " + std::to_string(step) +
                              "; last finite epoch: " +
                              std::to_string(static_cast<int>(history.size()) - 1));
        rec.loss_total += parts.total;
        rec.loss_rd += parts.rd;
        rec.bpp += parts.bpp;
        rec.mse += parts.mse;
        for (const auto& [k, v] : parts.task_losses) rec.task_loss[k] += v;
        ++seen;
        tape.backward(loss);
        ctx.collect_grads(grads, 1.0 / bs);
      }
      adam.step(codec.params, grads);
    }
    rec.loss_total /= seen;
    rec.loss_rd /= seen;
    rec.bpp /= seen;
    rec.mse /= seen;
    for (auto& [k, v] : rec.task_loss) v /= seen;
    auto val = evaluate_codec(codec, data.val, cfg.eval_scenes);
    rec.task_metric = val.metrics;
    history.push_back(std::move(rec));
  }
  if (codec.params.frozen_subset_hash() != frozen_before)
    throw TrainingError("frozen parameters changed during adaptation");
  return history;
}

// ---------------------------------------------------------------------------
// Rate sweep: one fresh adaptation run per lambda_rd
// ---------------------------------------------------------------------------

struct SweepPoint {
  double lambda_rd = 0;
  EvalSummary final_eval;  // full validation split
  History history;
};

template <class T>
std::map<double, SweepPoint> sweep_lambda(const ParamStore<double>& base_params,
                                          std::uint64_t base_hash,
                                          const StageConfig& stage,
                                          const AdaptConfig& adapt,
                                          const std::vector<TaskSpec>& tasks,
                                          const Dataset& data, std::vector<double> lambdas,
                                          const TrainConfig& cfg_template,
                                          ParamStore<T>* predictors = nullptr,
                                          std::uint64_t adaptor_seed = 1) {
  if (lambdas.empty()) throw ConfigError("lambda sweep needs a non-empty list");
  std::vector<double> uniq;
  for (double l : lambdas) {
    if (l <= 0) throw ConfigError("lambda_rd must be positive, got " + std::to_string(l));
    if (std::find(uniq.begin(), uniq.end(), l) != uniq.end()) {
      std::cerr << "[mtac] duplicate lambda_rd " << l << " dropped from sweep\n";
      continue;
    }
    uniq.push_back(l);
  }
  std::map<double, SweepPoint> out;
  for (double l : uniq) {
    AdaptedCodec<T> codec = build_adapted_codec<T>(base_params, base_hash, stage,
                                                   adapt, tasks, adaptor_seed);
    TrainConfig cfg = cfg_template;
    cfg.lambda_rd = l;
    SweepPoint pt;
    pt.lambda_rd = l;
    pt.history = train_adaptation(codec, data, cfg, predictors);
    pt.final_eval = evaluate_codec(codec, data.val);
    out.emplace(l, std::move(pt));
  }
  return out;
}

}  // namespace mtac

#endif  // MTAC_TRAINING_HPP_
