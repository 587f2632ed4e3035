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

#ifndef MTAC_CODEC_CORE_HPP_
#define MTAC_CODEC_CORE_HPP_

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "mtac/autodiff.hpp"
#include "mtac/common.hpp"
#include "mtac/entropy.hpp"
#include "mtac/optimizer.hpp"
#include "mtac/params.hpp"
#include "mtac/tensor.hpp"

namespace mtac {

// Stage schedule of the base codec. Every stage halves the spatial extent;
// the decoder mirrors the count with its own (narrower) output widths so the
// per-stage adaptation blocks stay small relative to the backbone.
struct StageConfig {
  int num_stages = 3;
  std::vector<int> channels_per_stage = {16, 48, 128};
  int window_size = 4;
  int latent_channels = 64;

  // Architecture knobs beyond the core schedule.
  std::vector<int> decoder_channels = {16, 12, 8};
  std::vector<int> encoder_mlp_ratio = {0, 2, 4};
  std::vector<int> decoder_mlp_ratio = {4, 0, 0};
  int entropy_support = 32;

  int downsample_factor() const { return 1 << num_stages; }
  void validate() const;
};

// Builds attention-stage graphs against a parameter store, memoizing leaf
// vars so each parameter enters the tape once.
template <class T>
struct GraphCtx {
  ag::Tape<T>& tape;
  ParamStore<T>& params;
  std::map<std::string, ag::Var<T>> leafs;

  ag::Var<T> P(const std::string& name) {
    auto it = leafs.find(name);
    if (it != leafs.end()) return it->second;
    auto& p = params.at(name);
    auto v = tape.leaf(p.value, !p.frozen);
    leafs.emplace(name, v);
    return v;
  }

  // Streams leaf gradients into an accumulator, scaled by `scale`.
  void collect_grads(std::map<std::string, Tensor<double>>& acc, double scale) const {
    for (const auto& [name, var] : leafs) {
      if (!var.needs_grad() || !var.has_grad()) continue;
      auto& slot = acc[name];
      if (slot.v.empty()) slot = Tensor<double>::zeros(var.val().dims);
      const auto& g = var.grad();
      for (std::int64_t i = 0; i < g.size(); ++i)
        slot.v[i] += scale * static_cast<double>(g.v[i]);
    }
  }
};

// Window partition index maps, cached per shape.
std::shared_ptr<const std::vector<std::int64_t>> window_partition_indices(
    int h, int w, int c, int win);
std::shared_ptr<const std::vector<std::int64_t>> window_merge_indices(
    int h, int w, int c, int win);

// ---------------------------------------------------------------------------
// Parameter construction
// ---------------------------------------------------------------------------

template <class T>
void add_linear(ParamStore<T>& ps, const std::string& prefix, int cin, int cout,
                std::uint64_t seed, double init_scale = -1.0) {
  if (init_scale < 0) init_scale = std::sqrt(2.0 / cin);
  ps.add(prefix + ".w", Tensor<T>::randn({cin, cout}, static_cast<T>(init_scale),
                                         derive_seed(seed, prefix + ".w")));
  ps.add(prefix + ".b", Tensor<T>::zeros({cout}));
}

template <class T>
void add_linear_uniform(ParamStore<T>& ps, const std::string& prefix, int cin,
                        int cout, std::uint64_t seed, double bound) {
  ps.add(prefix + ".w",
         Tensor<T>::rand_uniform({cin, cout}, static_cast<T>(-bound),
                                 static_cast<T>(bound),
                                 derive_seed(seed, prefix + ".w")));
  ps.add(prefix + ".b", Tensor<T>::zeros({cout}));
}

template <class T>
void add_conv(ParamStore<T>& ps, const std::string& prefix, int kh, int kw,
              int cin, int cout, std::uint64_t seed) {
  double scale = std::sqrt(2.0 / (kh * kw * cin));
  ps.add(prefix + ".w",
         Tensor<T>::randn({kh, kw, cin, cout}, static_cast<T>(scale),
                          derive_seed(seed, prefix + ".w")));
  ps.add(prefix + ".b", Tensor<T>::zeros({cout}));
}

template <class T>
void add_attention_block(ParamStore<T>& ps, const std::string& prefix, int c,
                         int mlp_ratio, std::uint64_t seed) {
  ps.add(prefix + ".ln1.g", Tensor<T>::full({c}, T(1)));
  ps.add(prefix + ".ln1.b", Tensor<T>::zeros({c}));
  for (const char* n : {"wq", "wk", "wv", "wo"})
    add_linear_uniform(ps, prefix + "." + n, c, c, seed, 0.05);
  if (mlp_ratio > 0) {
    int hidden = c * mlp_ratio;
    ps.add(prefix + ".ln2.g", Tensor<T>::full({c}, T(1)));
    ps.add(prefix + ".ln2.b", Tensor<T>::zeros({c}));
    add_linear(ps, prefix + ".mlp1", c, hidden, seed);
    add_linear(ps, prefix + ".mlp2", hidden, c, seed);
  }
}

// Base codec parameters (analysis + synthesis transforms + entropy model),
// deterministic in (config, seed). Frozen flags start false: pretraining
// owns the full set.
template <class T>
ParamStore<T> build_base_codec(const StageConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<T> ps;
  int cin = 3;
  for (int s = 0; s < cfg.num_stages; ++s) {
    std::string p = "enc.s" + std::to_string(s);
    int cout = cfg.channels_per_stage[s];
    add_conv(ps, p + ".conv", 3, 3, cin, cout, seed);
    add_attention_block(ps, p + ".attn", cout, cfg.encoder_mlp_ratio[s], seed);
    cin = cout;
  }
  add_linear(ps, "enc.to_latent", cin, cfg.latent_channels, seed);
  add_linear(ps, "dec.from_latent", cfg.latent_channels,
             cfg.channels_per_stage.back(), seed);
  cin = cfg.channels_per_stage.back();
  for (int s = 0; s < cfg.num_stages; ++s) {
    std::string p = "dec.s" + std::to_string(s);
    int cout = cfg.decoder_channels[s];
    add_conv(ps, p + ".conv", 3, 3, cin, cout, seed);
    add_attention_block(ps, p + ".attn", cout, cfg.decoder_mlp_ratio[s], seed);
    cin = cout;
  }
  add_conv(ps, "dec.to_image", 3, 3, cin, 3, seed);
  ps.add("entropy.mu", Tensor<T>::zeros({cfg.latent_channels}));
  ps.add("entropy.log_scale", Tensor<T>::zeros({cfg.latent_channels}));
  return ps;
}

// ---------------------------------------------------------------------------
// Forward graphs
// ---------------------------------------------------------------------------

template <class T>
ag::Var<T> pointwise_linear(GraphCtx<T>& ctx, ag::Var<T> x, const std::string& prefix) {
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  auto flat = ag::reshape(x, {h * w, c});
  auto y = ag::bias_add(ag::matmul(flat, ctx.P(prefix + ".w")), ctx.P(prefix + ".b"));
  return ag::reshape(y, {h, w, y.dim(1)});
}

template <class T>
ag::Var<T> attention_block(GraphCtx<T>& ctx, ag::Var<T> x, const std::string& prefix,
                           int window, int mlp_ratio) {
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % window != 0 || w % window != 0)
    throw ShapeError("attention grid " + std::to_string(h) + "x" +
                     std::to_string(w) + " not divisible by window_size " +
                     std::to_string(window));
  int nwin = (h / window) * (w / window);
  int tokens = window * window;
  auto t = ag::layer_norm(x, ctx.P(prefix + ".ln1.g"), ctx.P(prefix + ".ln1.b"));
  auto part = ag::gather(t, {nwin * tokens, c}, window_partition_indices(h, w, c, window));
  auto q = ag::reshape(ag::bias_add(ag::matmul(part, ctx.P(prefix + ".wq.w")),
                                    ctx.P(prefix + ".wq.b")),
                       {nwin, tokens, c});
  auto k = ag::reshape(ag::bias_add(ag::matmul(part, ctx.P(prefix + ".wk.w")),
                                    ctx.P(prefix + ".wk.b")),
                       {nwin, tokens, c});
  auto v = ag::reshape(ag::bias_add(ag::matmul(part, ctx.P(prefix + ".wv.w")),
                                    ctx.P(prefix + ".wv.b")),
                       {nwin, tokens, c});
  auto scores = ag::affine(ag::bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(c)), 0.0);
  auto attn = ag::softmax_last(scores);
  auto o = ag::reshape(ag::bmm(attn, v), {nwin * tokens, c});
  o = ag::bias_add(ag::matmul(o, ctx.P(prefix + ".wo.w")), ctx.P(prefix + ".wo.b"));
  auto merged = ag::gather(o, {h, w, c}, window_merge_indices(h, w, c, window));
  auto y = ag::add(x, merged);
  if (mlp_ratio > 0) {
    auto t2 = ag::layer_norm(y, ctx.P(prefix + ".ln2.g"), ctx.P(prefix + ".ln2.b"));
    auto flat = ag::reshape(t2, {h * w, c});
    auto hdn = ag::gelu(ag::bias_add(ag::matmul(flat, ctx.P(prefix + ".mlp1.w")),
                                     ctx.P(prefix + ".mlp1.b")));
    auto out = ag::bias_add(ag::matmul(hdn, ctx.P(prefix + ".mlp2.w")),
                            ctx.P(prefix + ".mlp2.b"));
    y = ag::add(y, ag::reshape(out, {h, w, c}));
  }
  return y;
}

template <class T>
ag::Var<T> encoder_stage(GraphCtx<T>& ctx, ag::Var<T> x, const StageConfig& cfg, int s) {
  std::string p = "enc.s" + std::to_string(s);
  auto y = ag::conv2d(x, ctx.P(p + ".conv.w"), ctx.P(p + ".conv.b"), 2, 1);
  return attention_block(ctx, y, p + ".attn", cfg.window_size,
                         cfg.encoder_mlp_ratio[s]);
}

template <class T>
ag::Var<T> decoder_stage(GraphCtx<T>& ctx, ag::Var<T> x, const StageConfig& cfg, int s) {
  std::string p = "dec.s" + std::to_string(s);
  auto up = ag::upsample2_nearest(x);
  auto y = ag::conv2d(up, ctx.P(p + ".conv.w"), ctx.P(p + ".conv.b"), 1, 1);
  return attention_block(ctx, y, p + ".attn", cfg.window_size,
                         cfg.decoder_mlp_ratio[s]);
}

template <class T>
void check_analysis_input(const StageConfig& cfg, int h, int w, int c) {
  int div = cfg.downsample_factor();
  if (h % div != 0 || w % div != 0)
    throw ShapeError("image dimensions " + std::to_string(h) + "x" +
                     std::to_string(w) + " must be divisible by " +
                     std::to_string(div));
  if (c != 3) throw ShapeError("expected a 3-channel image, got " + std::to_string(c));
  for (int s = 0; s < cfg.num_stages; ++s) {
    int hs = h >> (s + 1);
    int ws = w >> (s + 1);
    if (hs % cfg.window_size != 0 || ws % cfg.window_size != 0)
      throw ShapeError("stage " + std::to_string(s) + " grid " + std::to_string(hs) +
                       "x" + std::to_string(ws) + " not divisible by window_size " +
                       std::to_string(cfg.window_size));
  }
}

template <class T>
struct AnalysisGraph {
  ag::Var<T> latent;
  std::vector<ag::Var<T>> taps;  // post-stage features
};

template <class T>
AnalysisGraph<T> analysis_fwd(GraphCtx<T>& ctx, ag::Var<T> image, const StageConfig& cfg) {
  check_analysis_input<T>(cfg, image.dim(0), image.dim(1), image.dim(2));
  AnalysisGraph<T> out;
  ag::Var<T> x = image;
  for (int s = 0; s < cfg.num_stages; ++s) {
    x = encoder_stage(ctx, x, cfg, s);
    out.taps.push_back(x);
  }
  out.latent = pointwise_linear(ctx, x, "enc.to_latent");
  return out;
}

template <class T>
struct SynthesisGraph {
  ag::Var<T> recon;              // clamped to [0, 1]
  std::vector<ag::Var<T>> taps;  // post-stage features
};

template <class T>
SynthesisGraph<T> synthesis_fwd(GraphCtx<T>& ctx, ag::Var<T> latent, const StageConfig& cfg) {
  if (latent.dim(2) != cfg.latent_channels)
    throw ShapeError("latent has " + std::to_string(latent.dim(2)) +
                     " channels, config expects " +
                     std::to_string(cfg.latent_channels));
  SynthesisGraph<T> out;
  ag::Var<T> x = pointwise_linear(ctx, latent, "dec.from_latent");
  for (int s = 0; s < cfg.num_stages; ++s) {
    x = decoder_stage(ctx, x, cfg, s);
    out.taps.push_back(x);
  }
  auto img = ag::conv2d(x, ctx.P("dec.to_image.w"), ctx.P("dec.to_image.b"), 1, 1);
  out.recon = ag::clamp_ste(img, 0.0, 1.0);
  return out;
}

// Plain-tensor entry points matching the module contract.
template <class T>
std::pair<Tensor<T>, std::vector<Tensor<T>>> analysis(const Tensor<T>& image,
                                                      ParamStore<T>& params,
                                                      const StageConfig& cfg) {
  ag::Tape<T> tape(false);
  GraphCtx<T> ctx{tape, params};
  auto g = analysis_fwd(ctx, tape.leaf(image), cfg);
  std::vector<Tensor<T>> taps;
  for (auto& t : g.taps) taps.push_back(t.val());
  return {g.latent.val(), std::move(taps)};
}

template <class T>
std::pair<Tensor<T>, std::vector<Tensor<T>>> synthesis(const Tensor<T>& latent,
                                                       ParamStore<T>& params,
                                                       const StageConfig& cfg) {
  if (!latent.all_finite()) throw ShapeError("latent contains non-finite values");
  ag::Tape<T> tape(false);
  GraphCtx<T> ctx{tape, params};
  auto g = synthesis_fwd(ctx, tape.leaf(latent), cfg);
  std::vector<Tensor<T>> taps;
  for (auto& t : g.taps) taps.push_back(t.val());
  return {g.recon.val(), std::move(taps)};
}

// ---------------------------------------------------------------------------
// Pixel-fidelity pretraining (the frozen starting point for adaptation)
// ---------------------------------------------------------------------------

struct PretrainOptions {
  double lambda = 1.0;       // distortion weight in the R-D objective
  double mse_scale = 1000.0; // distortion is mse_scale * MSE on [0,1] pixels
  int steps = 1500;
  int batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int log_every = 100;
};

struct PretrainRecord {
  int step;
  double loss;
  double bpp;
  double mse;
};

// One R-D training step cost for a single image graph; shared between the
// pretrainer and the adaptation trainer.
template <class T>
struct RdTerms {
  ag::Var<T> bpp;
  ag::Var<T> mse;
  ag::Var<T> recon;
};

template <class T>
RdTerms<T> rd_graph(GraphCtx<T>& ctx, const Tensor<T>& image, const StageConfig& cfg,
                    QuantizeMode mode, std::mt19937_64* rng) {
  auto x = ctx.tape.leaf(image);
  auto a = analysis_fwd(ctx, x, cfg);
  auto y_hat = quantize(a.latent, mode, rng);
  auto bits = rate_bits(y_hat, ctx.P("entropy.mu"), ctx.P("entropy.log_scale"));
  double npix = static_cast<double>(image.dim(0)) * image.dim(1);
  auto bpp = ag::affine(bits, 1.0 / npix, 0.0);
  auto s = synthesis_fwd(ctx, y_hat, cfg);
  auto m = ag::mse_loss(s.recon, x);
  return {bpp, m, s.recon};
}

template <class T>
std::pair<ParamStore<T>, std::vector<PretrainRecord>> pretrain_base(
    const std::vector<Tensor<T>>& dataset, double lambda, int steps,
    const StageConfig& cfg, const PretrainOptions& opt_in = {}) {
  if (lambda <= 0) throw ConfigError("pretraining lambda must be > 0");
  if (steps < 0) throw ConfigError("pretraining steps must be >= 0");
  if (dataset.empty()) throw ConfigError("pretraining dataset is empty");
  PretrainOptions opt = opt_in;
  opt.lambda = lambda;
  ParamStore<T> params = build_base_codec<T>(cfg, opt.seed);
  std::vector<PretrainRecord> history;
  Adam<T> adam(opt.lr);
  std::mt19937_64 order_rng(derive_seed(opt.seed, "pretrain.order"));
  std::mt19937_64 noise_rng(derive_seed(opt.seed, "pretrain.noise"));
  for (int step = 0; step < steps; ++step) {
    std::map<std::string, Tensor<double>> grads;
    double loss_acc = 0, bpp_acc = 0, mse_acc = 0;
    int bs = std::min<int>(opt.batch_size, static_cast<int>(dataset.size()));
    for (int b = 0; b < bs; ++b) {
      const auto& img = dataset[order_rng() % dataset.size()];
      ag::Tape<T> tape;
      GraphCtx<T> ctx{tape, params};
      auto rd = rd_graph(ctx, img, cfg, QuantizeMode::kTrain, &noise_rng);
      auto loss = ag::add_scalars<T>(
          {rd.bpp, ag::affine(rd.mse, opt.lambda * opt.mse_scale, 0.0)});
      double lv = static_cast<double>(loss.val().v[0]);
      if (!std::isfinite(lv))
        throw TrainingError("pretraining diverged at step " + std::to_string(step));
      loss_acc += lv;
      bpp_acc += static_cast<double>(rd.bpp.val().v[0]);
      mse_acc += static_cast<double>(rd.mse.val().v[0]);
      tape.backward(loss);
      ctx.collect_grads(grads, 1.0 / bs);
    }
    adam.step(params, grads);
    if (step % opt.log_every == 0 || step + 1 == steps)
      history.push_back({step, loss_acc / bs, bpp_acc / bs, mse_acc / bs});
  }
  return {std::move(params), std::move(history)};
}

}  // namespace mtac

#endif  // MTAC_CODEC_CORE_HPP_
