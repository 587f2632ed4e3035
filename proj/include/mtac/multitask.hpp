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

#ifndef MTAC_MULTITASK_HPP_
#define MTAC_MULTITASK_HPP_

#include <map>
#include <string>
#include <vector>

#include "mtac/adaptation.hpp"
#include "mtac/codec_core.hpp"
#include "mtac/entropy.hpp"
#include "mtac/task_spec.hpp"

namespace mtac {

// Frozen base codec extended with task-agnostic encoder adaptors, per-task
// decoder adaptors, per-stage task aggregation, per-task cross-scale fusion
// and decode heads. One parameter store holds everything; the frozen mask
// partitions base from adaptation.
template <class T>
struct AdaptedCodec {
  StageConfig stage;
  AdaptConfig adapt;
  std::vector<TaskSpec> tasks;
  ParamStore<T> params;
  std::uint64_t base_hash = 0;  // file hash of the base checkpoint

  const TaskSpec& task(const std::string& name) const { return find_task(tasks, name); }
  std::vector<std::string> task_names() const {
    std::vector<std::string> n;
    for (const auto& t : tasks) n.push_back(t.name);
    return n;
  }
};

template <class T>
AdaptedCodec<T> build_adapted_codec(const ParamStore<double>& base_params,
                                    std::uint64_t base_hash, const StageConfig& stage,
                                    const AdaptConfig& adapt,
                                    const std::vector<TaskSpec>& tasks,
                                    std::uint64_t seed) {
  stage.validate();
  adapt.validate();
  if (tasks.empty()) throw ConfigError("adapted codec needs at least one task");
  for (const auto& t : tasks) t.validate();
  AdaptedCodec<T> codec;
  codec.stage = stage;
  codec.adapt = adapt;
  codec.tasks = tasks;
  codec.base_hash = base_hash;
  for (const auto& [name, p] : base_params.entries()) {
    bool trainable_entropy =
        adapt.train_entropy && name.rfind("entropy.", 0) == 0;
    codec.params.add(name, p.value.template cast<T>(), !trainable_entropy);
  }
  auto& ps = codec.params;
  int n = static_cast<int>(tasks.size());
  for (int s = 0; s < stage.num_stages; ++s) {
    add_fe_adaptor(ps, "adapt.enc.s" + std::to_string(s) + ".fe",
                   stage.channels_per_stage[s], adapt.mask_size,
                   derive_seed(seed, "enc.fe", s));
    for (const auto& t : tasks)
      add_fe_adaptor(ps, "adapt.dec.s" + std::to_string(s) + "." + t.name + ".fe",
                     stage.decoder_channels[s], adapt.mask_size,
                     derive_seed(seed, "dec.fe." + t.name, s));
    add_tam(ps, "adapt.tam.s" + std::to_string(s), n, stage.decoder_channels[s],
            derive_seed(seed, "tam", s));
  }
  int c1 = stage.decoder_channels[0];
  int c2 = stage.num_stages > 1 ? stage.decoder_channels[1] : c1;
  int c3 = stage.decoder_channels[stage.num_stages - 1];
  for (const auto& t : tasks) {
    add_msf(ps, "adapt.msf." + t.name, c1, c2, c3, adapt.msf_dim,
            derive_seed(seed, "msf." + t.name));
    add_head(ps, "adapt.head." + t.name, c3, adapt.head_hidden, t.out_channels,
             derive_seed(seed, "head." + t.name));
  }
  return codec;
}

// ---------------------------------------------------------------------------
// Forward graphs
// ---------------------------------------------------------------------------

template <class T>
struct EncodeGraph {
  ag::Var<T> latent;   // pre-quantization
  ag::Var<T> y_hat;    // quantized (rounded or noisy)
  ag::Var<T> bits;     // estimated bits
  std::vector<ag::Var<T>> taps;  // post-adaptor stage features
};

// Single-path encoder: the adaptors are task-agnostic, so the latent (and
// the bitstream) never depend on the requested task set.
template <class T>
EncodeGraph<T> encode_fwd(GraphCtx<T>& ctx, ag::Var<T> image, const AdaptedCodec<T>& c,
                          QuantizeMode mode, std::mt19937_64* rng = nullptr) {
  check_analysis_input<T>(c.stage, image.dim(0), image.dim(1), image.dim(2));
  EncodeGraph<T> out;
  ag::Var<T> x = image;
  for (int s = 0; s < c.stage.num_stages; ++s) {
    x = encoder_stage(ctx, x, c.stage, s);
    x = fe_forward(ctx, x, "adapt.enc.s" + std::to_string(s) + ".fe");
    out.taps.push_back(x);
  }
  out.latent = pointwise_linear(ctx, x, "enc.to_latent");
  out.y_hat = quantize(out.latent, mode, rng);
  out.bits = rate_bits(out.y_hat, ctx.P("entropy.mu"), ctx.P("entropy.log_scale"));
  return out;
}

template <class T>
struct DecodeGraph {
  ag::Var<T> x_human;
  std::map<std::string, ag::Var<T>> predictions;  // requested tasks only
  std::map<std::string, ag::Var<T>> fused;        // MSF outputs for those tasks
};

// Multi-path decoder. All configured task adaptors and the TAM always run
// (the shared main path depends on the full roster); MSF and heads run only
// for the requested subset, which therefore never changes any output value.
template <class T>
DecodeGraph<T> decode_fwd(GraphCtx<T>& ctx, ag::Var<T> y_hat, const AdaptedCodec<T>& c,
                          const std::vector<std::string>& request) {
  if (request.empty()) throw LookupError("decode needs a non-empty task subset");
  for (const auto& name : request) c.task(name);  // throws on unknown names

  int n = static_cast<int>(c.tasks.size());
  ag::Var<T> x = pointwise_linear(ctx, y_hat, "dec.from_latent");
  std::map<std::string, std::vector<ag::Var<T>>> refined;
  for (int s = 0; s < c.stage.num_stages; ++s) {
    x = decoder_stage(ctx, x, c.stage, s);
    std::vector<ag::Var<T>> feats;
    feats.reserve(n);
    for (const auto& t : c.tasks)
      feats.push_back(fe_forward(
          ctx, x, "adapt.dec.s" + std::to_string(s) + "." + t.name + ".fe"));
    if (c.adapt.tam_bypass) {
      for (int k = 0; k < n; ++k) refined[c.tasks[k].name].push_back(feats[k]);
      // main path continues on the frozen stage output
    } else {
      auto tam = tam_forward(ctx, feats, "adapt.tam.s" + std::to_string(s));
      for (int k = 0; k < n; ++k) refined[c.tasks[k].name].push_back(tam.refined[k]);
      x = tam.shared;
    }
  }
  DecodeGraph<T> out;
  auto img = ag::conv2d(x, ctx.P("dec.to_image.w"), ctx.P("dec.to_image.b"), 1, 1);
  out.x_human = ag::clamp_ste(img, 0.0, 1.0);
  int out_h = out.x_human.dim(0), out_w = out.x_human.dim(1);
  for (const auto& name : request) {
    auto& taps = refined[name];
    if (static_cast<int>(taps.size()) < 3)
      throw ConfigError("multi-scale fusion needs 3 decode scales, have " +
                        std::to_string(taps.size()));
    auto fused = msf_forward(ctx, taps[0], taps[1], taps[taps.size() - 1],
                             "adapt.msf." + name, c.adapt);
    out.fused.emplace(name, fused);
    out.predictions.emplace(
        name, head_forward(ctx, fused, "adapt.head." + name, out_h, out_w));
  }
  return out;
}

// Optional per-task reconstruction for inspection: the task's fused feature
// pushed through the frozen image projection.
template <class T>
ag::Var<T> per_task_recon(GraphCtx<T>& ctx, ag::Var<T> fused) {
  auto img = ag::conv2d(fused, ctx.P("dec.to_image.w"), ctx.P("dec.to_image.b"), 1, 1);
  return ag::clamp_ste(img, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Plain-tensor inference and reporting
// ---------------------------------------------------------------------------

template <class T>
struct EvalResult {
  Tensor<T> x_human;
  std::map<std::string, Tensor<double>> predictions;
  double bpp_estimate = 0;
  Tensor<int> symbols;  // rounded latent, input to the range coder
};

template <class T>
EvalResult<T> run_codec(AdaptedCodec<T>& c, const Tensor<T>& image,
                        const std::vector<std::string>& request) {
  ag::Tape<T> tape(false);
  GraphCtx<T> ctx{tape, c.params};
  auto enc = encode_fwd(ctx, tape.leaf(image), c, QuantizeMode::kEval);
  auto dec = decode_fwd(ctx, enc.y_hat, c, request);
  EvalResult<T> r;
  r.x_human = dec.x_human.val();
  for (auto& [k, v] : dec.predictions)
    r.predictions.emplace(k, v.val().template cast<double>());
  r.bpp_estimate = static_cast<double>(enc.bits.val().v[0]) /
                   (static_cast<double>(image.dim(0)) * image.dim(1));
  r.symbols = latent_to_symbols(enc.y_hat.val().template cast<double>());
  return r;
}

// Encode an image to the shared bitstream (eval-mode quantization).
template <class T>
EncodeResult encode_image_to_stream(AdaptedCodec<T>& c, const Tensor<T>& image) {
  ag::Tape<T> tape(false);
  GraphCtx<T> ctx{tape, c.params};
  auto enc = encode_fwd(ctx, tape.leaf(image), c, QuantizeMode::kEval);
  LatentCode code;
  code.symbols = latent_to_symbols(enc.y_hat.val().template cast<double>());
  EntropyModel m = snapshot_entropy_model(c.params, c.stage.entropy_support);
  code.model_id = m.id();
  return encode_bitstream(code, m);
}

// Decode a bitstream into the human reconstruction plus requested task maps.
template <class T>
EvalResult<T> decode_stream(AdaptedCodec<T>& c, const Bitstream& b,
                            const std::vector<std::string>& request) {
  EntropyModel m = snapshot_entropy_model(c.params, c.stage.entropy_support);
  LatentCode code = decode_bitstream(b, m);
  Tensor<T> y_hat(code.symbols.dims);
  for (std::int64_t i = 0; i < y_hat.size(); ++i)
    y_hat.v[i] = static_cast<T>(code.symbols.v[i]);
  ag::Tape<T> tape(false);
  GraphCtx<T> ctx{tape, c.params};
  auto dec = decode_fwd(ctx, tape.leaf(y_hat), c, request);
  EvalResult<T> r;
  r.x_human = dec.x_human.val();
  for (auto& [k, v] : dec.predictions)
    r.predictions.emplace(k, v.val().template cast<double>());
  r.symbols = code.symbols;
  return r;
}

struct TrainableReport {
  std::int64_t total = 0;
  std::int64_t trainable = 0;
  double ratio = 0;
};

template <class T>
TrainableReport trainable_report(const AdaptedCodec<T>& c) {
  TrainableReport r;
  r.total = c.params.total_count();
  r.trainable = c.params.trainable_count();
  r.ratio = r.total > 0 ? static_cast<double>(r.trainable) / static_cast<double>(r.total)
                        : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Checkpointing (adaptation parameters + base reference)
// ---------------------------------------------------------------------------

template <class T>
void save_adapted_checkpoint(const AdaptedCodec<T>& codec, const std::string& path,
                             const std::string& base_path);

template <class T>
AdaptedCodec<T> load_adapted_checkpoint(const std::string& path,
                                        const std::string& base_path_override = "");

}  // namespace mtac

#endif  // MTAC_MULTITASK_HPP_
