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

#ifndef MTAC_SPECTRAL_HPP_
#define MTAC_SPECTRAL_HPP_

#include <complex>
#include <memory>
#include <vector>

#include "mtac/autodiff.hpp"
#include "mtac/fft.hpp"
#include "mtac/tensor.hpp"

namespace mtac::ag {

namespace detail {

// The stored mask covers the half spectrum (h, w/2+1); frequencies beyond
// w/2 reuse the mirrored entry, so a real-valued filter response comes out
// of the inverse transform up to roundoff (the real part is kept).
inline double mask_at(const double* m, int h, int w, int wh, int u, int v) {
  if (v <= w / 2) return m[u * wh + v];
  return m[((h - u) % h) * wh + (w - v)];
}

}  // namespace detail

// Frequency branch of the feature-extraction adaptor:
//   y = Re(IFFT(M_full . FFT(x)))   per channel.
// x: (h, w, c); mask: (h, w/2+1, c) over the half spectrum.
template <class T>
Var<T> spectral_filter(Var<T> x, Var<T> mask) {
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  int wh = w / 2 + 1;
  if (mask.dim(0) != h || mask.dim(1) != wh || mask.dim(2) != c)
    throw ShapeError("spectral mask shape " + mask.val().shape_str() +
                     " does not match feature spectrum (" + std::to_string(h) +
                     ", " + std::to_string(wh) + ", " + std::to_string(c) + ")");
  std::int64_t n = static_cast<std::int64_t>(h) * w;
  // Channel-planar double copy of the mask for the transform kernels.
  auto mask_d = std::make_shared<std::vector<double>>(static_cast<std::size_t>(h) * wh * c);
  for (int cc = 0; cc < c; ++cc)
    for (int u = 0; u < h; ++u)
      for (int v = 0; v < wh; ++v)
        (*mask_d)[(static_cast<std::size_t>(cc) * h + u) * wh + v] =
            static_cast<double>(mask.val().at(u, v, cc));

  Tensor<T> out({h, w, c});
  Node<T>* px = x.node();
  Node<T>* pm = mask.node();
  bool needs = px->needs || pm->needs;
  auto spectra = needs && pm->needs
                     ? std::make_shared<std::vector<std::complex<double>>>()
                     : nullptr;
  {
    std::vector<std::complex<double>> in(n), sp(n), tmp(n);
    for (int cc = 0; cc < c; ++cc) {
      const double* mh = mask_d->data() + static_cast<std::size_t>(cc) * h * wh;
      for (std::int64_t i = 0; i < n; ++i)
        in[i] = std::complex<double>(static_cast<double>(x.val().v[i * c + cc]), 0.0);
      dft2d(h, w, -1, in.data(), sp.data());
      if (spectra) {
        spectra->resize(static_cast<std::size_t>(n) * c);
        for (std::int64_t i = 0; i < n; ++i) (*spectra)[i * c + cc] = sp[i];
      }
      for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v)
          sp[u * w + v] *= detail::mask_at(mh, h, w, wh, u, v);
      dft2d(h, w, 1, sp.data(), tmp.data());
      for (std::int64_t i = 0; i < n; ++i)
        out.v[i * c + cc] = static_cast<T>(tmp[i].real() / static_cast<double>(n));
    }
  }
  return x.tape()->make(
      std::move(out), needs, [px, pm, mask_d, spectra, h, w, c, wh, n](Node<T>& nd) {
        // dL/dx is the adjoint filter: DFT(M . IDFT(g)) / n, real part.
        if (auto* g = Tape<T>::grad_buf(px)) {
          std::vector<std::complex<double>> in(n), sp(n), tmp(n);
          for (int cc = 0; cc < c; ++cc) {
            const double* mh = mask_d->data() + static_cast<std::size_t>(cc) * h * wh;
            for (std::int64_t i = 0; i < n; ++i)
              in[i] = std::complex<double>(static_cast<double>(nd.grad.v[i * c + cc]), 0.0);
            dft2d(h, w, 1, in.data(), sp.data());
            for (int u = 0; u < h; ++u)
              for (int v = 0; v < w; ++v)
                sp[u * w + v] *= detail::mask_at(mh, h, w, wh, u, v);
            dft2d(h, w, -1, sp.data(), tmp.data());
            for (std::int64_t i = 0; i < n; ++i)
              g->v[i * c + cc] += static_cast<T>(tmp[i].real() / static_cast<double>(n));
          }
        }
        // dL/dM_full(u,v) = Re(X(u,v) * conj(G(u,v))) / n, folded onto the
        // stored half grid.
        if (auto* g = Tape<T>::grad_buf(pm)) {
          std::vector<std::complex<double>> in(n), gs(n);
          for (int cc = 0; cc < c; ++cc) {
            for (std::int64_t i = 0; i < n; ++i)
              in[i] = std::complex<double>(static_cast<double>(nd.grad.v[i * c + cc]), 0.0);
            dft2d(h, w, -1, in.data(), gs.data());
            for (int u = 0; u < h; ++u) {
              for (int v = 0; v < w; ++v) {
                const std::complex<double>& xs = (*spectra)[(static_cast<std::int64_t>(u) * w + v) * c + cc];
                double d = (xs * std::conj(gs[u * w + v])).real() / static_cast<double>(n);
                int uu = u, vv = v;
                if (v > w / 2) {
                  uu = (h - u) % h;
                  vv = w - v;
                }
                g->v[(static_cast<std::int64_t>(uu) * wh + vv) * c + cc] += static_cast<T>(d);
              }
            }
          }
        }
      });
}

}  // namespace mtac::ag

#endif  // MTAC_SPECTRAL_HPP_
