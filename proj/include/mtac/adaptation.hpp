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

#ifndef MTAC_ADAPTATION_HPP_
#define MTAC_ADAPTATION_HPP_

#include <string>
#include <vector>

#include "mtac/autodiff.hpp"
#include "mtac/codec_core.hpp"
#include "mtac/spectral.hpp"

namespace mtac {

// Structural knobs of the adaptation blocks.
struct AdaptConfig {
  // Nominal spatial grid of the learnable spectral masks (pre-transform);
  // masks are bilinearly resized when a stage runs at a different extent.
  int mask_size = 4;
  int msf_dim = 8;           // cross-scale attention head dim
  int msf_window = 4;        // token window for grids past the global limit
  int msf_global_limit = 32; // grids up to this extent attend globally
  int head_hidden = 8;
  bool train_entropy = true;
  bool tam_bypass = false;   // diagnostic mode: no cross-task mixing

  void validate() const;
};

// Emitted once per adaptor when a mask gets resized away from its nominal
// grid; tests and the CLI can inspect it.
void note_mask_resize(const std::string& adaptor_name, int h, int w);
std::size_t mask_resize_log_size();

// ---------------------------------------------------------------------------
// Feature Extraction adaptor: residual dual-branch block
//   y = x + gamma * (DWConv(x) + IFFT(M . FFT(x)))
// gamma starts at zero, so a fresh adaptor is an exact identity.
// ---------------------------------------------------------------------------

template <class T>
void add_fe_adaptor(ParamStore<T>& ps, const std::string& prefix, int c,
                    int mask_size, std::uint64_t seed) {
  ps.add(prefix + ".dw",
         Tensor<T>::randn({3, 3, c}, static_cast<T>(std::sqrt(2.0 / (9 * c))),
                          derive_seed(seed, prefix + ".dw")));
  ps.add(prefix + ".mask",
         Tensor<T>::full({mask_size, mask_size / 2 + 1, c}, T(1)));
  ps.add(prefix + ".gamma", Tensor<T>::zeros({1}));
}

template <class T>
ag::Var<T> fe_forward(GraphCtx<T>& ctx, ag::Var<T> x, const std::string& prefix) {
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  auto dw_w = ctx.P(prefix + ".dw");
  if (dw_w.dim(2) != c)
    throw ShapeError("FE adaptor '" + prefix + "' built for " +
                     std::to_string(dw_w.dim(2)) + " channels, feature has " +
                     std::to_string(c));
  auto spatial = ag::dwconv3x3(x, dw_w);
  auto mask = ctx.P(prefix + ".mask");
  if (mask.dim(0) != h || mask.dim(1) != w / 2 + 1) {
    note_mask_resize(prefix, h, w);
    mask = ag::resize_bilinear(mask, h, w / 2 + 1);
  }
  auto freq = ag::spectral_filter(x, mask);
  return ag::add(x, ag::scale_by(ag::add(spatial, freq), ctx.P(prefix + ".gamma")));
}

// ---------------------------------------------------------------------------
// Task Aggregation Module: softmax channel selection across N task features.
// The mask is a per-(location, channel) convex combination over tasks, so the
// group sum keeps C channels and reduces to the plain feature when all task
// features agree (exactly, in floating point).
// ---------------------------------------------------------------------------

template <class T>
void add_tam(ParamStore<T>& ps, const std::string& prefix, int num_tasks, int c,
             std::uint64_t seed) {
  int nc = num_tasks * c;
  int hidden = std::max(nc / 2, 8);
  add_linear(ps, prefix + ".phi1", nc, hidden, seed);
  add_linear(ps, prefix + ".phi2", hidden, nc, seed);
}

template <class T>
struct TamOut {
  ag::Var<T> shared;
  std::vector<ag::Var<T>> refined;
};

template <class T>
TamOut<T> tam_forward(GraphCtx<T>& ctx, const std::vector<ag::Var<T>>& feats,
                      const std::string& prefix) {
  int n = static_cast<int>(feats.size());
  if (n == 0) throw ShapeError("TAM needs at least one task feature");
  for (int k = 1; k < n; ++k)
    if (!feats[k].val().same_shape(feats[0].val()))
      throw ShapeError("TAM task feature " + std::to_string(k) + " has shape " +
                       feats[k].val().shape_str() + ", expected " +
                       feats[0].val().shape_str());
  int h = feats[0].dim(0), w = feats[0].dim(1), c = feats[0].dim(2);
  auto cat = ag::concat_last(feats);
  auto flat = ag::reshape(cat, {h * w, n * c});
  auto hdn = ag::gelu(ag::bias_add(ag::matmul(flat, ctx.P(prefix + ".phi1.w")),
                                   ctx.P(prefix + ".phi1.b")));
  auto logits = ag::bias_add(ag::matmul(hdn, ctx.P(prefix + ".phi2.w")),
                             ctx.P(prefix + ".phi2.b"));
  auto mask = ag::softmax_taskgroups(ag::reshape(logits, {h, w, n * c}), n);
  // shared = sum_k m_k . F_k, written as F_0 + sum_k m_k . (F_k - F_0) so a
  // stack of identical task features passes through bit-exactly.
  ag::Var<T> shared = feats[0];
  for (int k = 1; k < n; ++k) {
    auto mk = ag::slice_last(mask, k * c, c);
    shared = ag::add(shared, ag::mul(mk, ag::sub(feats[k], feats[0])));
  }
  TamOut<T> out;
  out.shared = shared;
  out.refined.reserve(n);
  for (int k = 0; k < n; ++k) out.refined.push_back(ag::add(feats[k], shared));
  return out;
}

// ---------------------------------------------------------------------------
// Multi-Scale Fusion: the two coarse-scale features form queries/keys, the
// fine-scale feature forms values, attention runs over spatial tokens.
// out_proj starts at zero so the block opens as an identity on F3.
// ---------------------------------------------------------------------------

template <class T>
void add_msf(ParamStore<T>& ps, const std::string& prefix, int c1, int c2, int c3,
             int d, std::uint64_t seed) {
  add_linear(ps, prefix + ".qk", c1 + c2, 2 * d, seed);
  add_linear(ps, prefix + ".v", c3, d, seed);
  ps.add(prefix + ".out.w", Tensor<T>::zeros({d, c3}));
  ps.add(prefix + ".out.b", Tensor<T>::zeros({c3}));
}

template <class T>
ag::Var<T> msf_forward(GraphCtx<T>& ctx, ag::Var<T> f1, ag::Var<T> f2, ag::Var<T> f3,
                       const std::string& prefix, const AdaptConfig& cfg) {
  int h = f3.dim(0), w = f3.dim(1), c3 = f3.dim(2);
  int d = cfg.msf_dim;
  auto r1 = ag::resize_bilinear(f1, h, w);
  auto r2 = ag::resize_bilinear(f2, h, w);
  auto qk_in = ag::reshape(ag::concat_last(std::vector<ag::Var<T>>{r1, r2}),
                           {h * w, r1.dim(2) + r2.dim(2)});
  auto qk = ag::bias_add(ag::matmul(qk_in, ctx.P(prefix + ".qk.w")),
                         ctx.P(prefix + ".qk.b"));
  auto q = ag::slice_last(qk, 0, d);
  auto k = ag::slice_last(qk, d, d);
  auto v = ag::bias_add(ag::matmul(ag::reshape(f3, {h * w, c3}), ctx.P(prefix + ".v.w")),
                        ctx.P(prefix + ".v.b"));

  bool windowed = std::max(h, w) > cfg.msf_global_limit && h % cfg.msf_window == 0 &&
                  w % cfg.msf_window == 0;
  ag::Var<T> fused;
  if (windowed) {
    int win = cfg.msf_window;
    int nwin = (h / win) * (w / win);
    int tokens = win * win;
    auto part_idx = window_partition_indices(h, w, d, win);
    auto qw = ag::reshape(ag::gather(ag::reshape(q, {h, w, d}), {nwin * tokens, d}, part_idx),
                          {nwin, tokens, d});
    auto kw = ag::reshape(ag::gather(ag::reshape(k, {h, w, d}), {nwin * tokens, d}, part_idx),
                          {nwin, tokens, d});
    auto vw = ag::reshape(ag::gather(ag::reshape(v, {h, w, d}), {nwin * tokens, d}, part_idx),
                          {nwin, tokens, d});
    auto attn = ag::softmax_last(
        ag::affine(ag::bmm(qw, kw, false, true), 1.0 / std::sqrt(static_cast<double>(d)), 0.0));
    auto o = ag::reshape(ag::bmm(attn, vw), {nwin * tokens, d});
    fused = ag::gather(ag::reshape(o, {nwin * tokens, d}), {h, w, d},
                       window_merge_indices(h, w, d, win));
    fused = ag::reshape(fused, {h * w, d});
  } else {
    auto qb = ag::reshape(q, {1, h * w, d});
    auto kb = ag::reshape(k, {1, h * w, d});
    auto vb = ag::reshape(v, {1, h * w, d});
    auto attn = ag::softmax_last(
        ag::affine(ag::bmm(qb, kb, false, true), 1.0 / std::sqrt(static_cast<double>(d)), 0.0));
    fused = ag::reshape(ag::bmm(attn, vb), {h * w, d});
  }
  auto out = ag::bias_add(ag::matmul(fused, ctx.P(prefix + ".out.w")),
                          ctx.P(prefix + ".out.b"));
  return ag::add(f3, ag::reshape(out, {h, w, c3}));
}

// Task decode head: two 3x3 convs with a nonlinearity, then bilinear
// upsampling to image resolution.
template <class T>
void add_head(ParamStore<T>& ps, const std::string& prefix, int cin, int hidden,
              int out_channels, std::uint64_t seed) {
  add_conv(ps, prefix + ".c1", 3, 3, cin, hidden, seed);
  add_conv(ps, prefix + ".c2", 3, 3, hidden, out_channels, seed);
}

template <class T>
ag::Var<T> head_forward(GraphCtx<T>& ctx, ag::Var<T> x, const std::string& prefix,
                        int out_h, int out_w) {
  auto y = ag::relu(ag::conv2d(x, ctx.P(prefix + ".c1.w"), ctx.P(prefix + ".c1.b"), 1, 1));
  y = ag::conv2d(y, ctx.P(prefix + ".c2.w"), ctx.P(prefix + ".c2.b"), 1, 1);
  return ag::resize_bilinear(y, out_h, out_w);
}

}  // namespace mtac

#endif  // MTAC_ADAPTATION_HPP_
