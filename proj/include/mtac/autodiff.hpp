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

#ifndef MTAC_AUTODIFF_HPP_
#define MTAC_AUTODIFF_HPP_

#include <Eigen/Core>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "mtac/common.hpp"
#include "mtac/tensor.hpp"

namespace mtac::ag {

// Reverse-mode tape. Graphs are built eagerly, one per sample; backward
// walks nodes in reverse creation order (creation order is topological).
// Gradients are only materialized on the subgraph that needs them, so
// metric-only branches cost nothing extra.

template <class T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;  // empty until first accumulation
  bool needs = false;
  std::function<void(Node<T>&)> back;
};

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;
  Var(Node<T>* n, Tape<T>* t) : n_(n), tape_(t) {}

  const Tensor<T>& val() const { return n_->val; }
  const Tensor<T>& grad() const { return n_->grad; }
  bool has_grad() const { return !n_->grad.v.empty(); }
  bool needs_grad() const { return n_->needs; }
  const std::vector<int>& dims() const { return n_->val.dims; }
  int dim(int i) const { return n_->val.dim(i); }
  bool ok() const { return n_ != nullptr; }

  Node<T>* node() const { return n_; }
  Tape<T>* tape() const { return tape_; }

 private:
  Node<T>* n_ = nullptr;
  Tape<T>* tape_ = nullptr;
};

template <class T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> leaf(Tensor<T> value, bool needs = false) {
    Node<T>* n = new_node();
    n->val = std::move(value);
    n->needs = needs && grad_enabled_;
    return Var<T>(n, this);
  }

  Var<T> make(Tensor<T> value, bool needs,
              std::function<void(Node<T>&)> back) {
    Node<T>* n = new_node();
    n->val = std::move(value);
    n->needs = needs && grad_enabled_;
    if (n->needs) n->back = std::move(back);
    return Var<T>(n, this);
  }

  // Accumulates into a parent's gradient buffer if that parent wants one.
  static Tensor<T>* grad_buf(Node<T>* p) {
    if (!p->needs) return nullptr;
    if (p->grad.v.empty()) p->grad = Tensor<T>::zeros(p->val.dims);
    return &p->grad;
  }

  void backward(const Var<T>& loss) {
    assert(loss.val().size() == 1);
    if (!grad_enabled_) throw TrainingError("backward on a no-grad tape");
    loss.node()->grad = Tensor<T>::full({1}, T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (!n.grad.v.empty() && n.back) n.back(n);
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  Node<T>* new_node() {
    nodes_.push_back(std::make_unique<Node<T>>());
    return nodes_.back().get();
  }

  std::deque<std::unique_ptr<Node<T>>> nodes_;
  bool grad_enabled_;
};

namespace detail {

template <class T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// C (m x n) = or += op(A) * op(B)
template <class T>
void gemm(const T* a, int ar, int ac, bool ta, const T* b, int br, int bc,
          bool tb, T* c, bool accumulate) {
  ConstMatMap<T> A(a, ar, ac);
  ConstMatMap<T> B(b, br, bc);
  int m = ta ? ac : ar;
  int n = tb ? br : bc;
  MatMap<T> C(c, m, n);
  if (!ta && !tb) {
    if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
  } else if (ta && !tb) {
    if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
  } else if (!ta && tb) {
    if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
  } else {
    if (accumulate) C.noalias() += A.transpose() * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  assert(a.val().same_shape(b.val()));
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.size(); ++i) out.v[i] += b.val().v[i];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return a.tape()->make(std::move(out), pa->needs || pb->needs,
                        [pa, pb](Node<T>& n) {
                          if (auto* g = Tape<T>::grad_buf(pa))
                            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                              g->v[i] += n.grad.v[i];
                          if (auto* g = Tape<T>::grad_buf(pb))
                            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                              g->v[i] += n.grad.v[i];
                        });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  assert(a.val().same_shape(b.val()));
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.size(); ++i) out.v[i] -= b.val().v[i];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return a.tape()->make(std::move(out), pa->needs || pb->needs,
                        [pa, pb](Node<T>& n) {
                          if (auto* g = Tape<T>::grad_buf(pa))
                            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                              g->v[i] += n.grad.v[i];
                          if (auto* g = Tape<T>::grad_buf(pb))
                            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                              g->v[i] -= n.grad.v[i];
                        });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  assert(a.val().same_shape(b.val()));
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.size(); ++i) out.v[i] *= b.val().v[i];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return a.tape()->make(std::move(out), pa->needs || pb->needs,
                        [pa, pb](Node<T>& n) {
                          if (auto* g = Tape<T>::grad_buf(pa))
                            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                              g->v[i] += n.grad.v[i] * pb->val.v[i];
                          if (auto* g = Tape<T>::grad_buf(pb))
                            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                              g->v[i] += n.grad.v[i] * pa->val.v[i];
                        });
}

// y = a * x + b with scalar constants.
template <class T>
Var<T> affine(Var<T> x, double a, double b) {
  Tensor<T> out = x.val();
  for (auto& e : out.v) e = static_cast<T>(a * static_cast<double>(e) + b);
  Node<T>* px = x.node();
  return x.tape()->make(std::move(out), px->needs, [px, a](Node<T>& n) {
    if (auto* g = Tape<T>::grad_buf(px))
      for (std::int64_t i = 0; i < n.grad.size(); ++i)
        g->v[i] += static_cast<T>(a) * n.grad.v[i];
  });
}

// y = s * x with s a trainable 1-element Var (residual gate).
template <class T>
Var<T> scale_by(Var<T> x, Var<T> s) {
  assert(s.val().size() == 1);
  T sv = s.val().v[0];
  Tensor<T> out = x.val();
  for (auto& e : out.v) e *= sv;
  Node<T>* px = x.node();
  Node<T>* ps = s.node();
  return x.tape()->make(std::move(out), px->needs || ps->needs,
                        [px, ps, sv](Node<T>& n) {
                          if (auto* g = Tape<T>::grad_buf(px))
                            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                              g->v[i] += sv * n.grad.v[i];
                          if (auto* g = Tape<T>::grad_buf(ps)) {
                            T acc = 0;
                            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                              acc += n.grad.v[i] * px->val.v[i];
                            g->v[0] += acc;
                          }
                        });
}

// Adds a (c)-shaped bias over the innermost dimension.
template <class T>
Var<T> bias_add(Var<T> x, Var<T> b) {
  int c = x.dim(x.val().rank() - 1);
  assert(b.val().size() == c);
  Tensor<T> out = x.val();
  std::int64_t rows = out.size() / c;
  for (std::int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) out.v[r * c + j] += b.val().v[j];
  Node<T>* px = x.node();
  Node<T>* pb = b.node();
  return x.tape()->make(std::move(out), px->needs || pb->needs,
                        [px, pb, rows, c](Node<T>& n) {
                          if (auto* g = Tape<T>::grad_buf(px))
                            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                              g->v[i] += n.grad.v[i];
                          if (auto* g = Tape<T>::grad_buf(pb))
                            for (std::int64_t r = 0; r < rows; ++r)
                              for (int j = 0; j < c; ++j)
                                g->v[j] += n.grad.v[r * c + j];
                        });
}

template <class T>
Var<T> reshape(Var<T> x, std::vector<int> dims) {
  assert(Tensor<T>::count(dims) == x.val().size());
  Tensor<T> out = x.val();
  std::vector<int> old = out.dims;
  out.dims = std::move(dims);
  Node<T>* px = x.node();
  return x.tape()->make(std::move(out), px->needs, [px](Node<T>& n) {
    if (auto* g = Tape<T>::grad_buf(px))
      for (std::int64_t i = 0; i < n.grad.size(); ++i) g->v[i] += n.grad.v[i];
  });
}

// y[i] = x[idx[i]]; idx is any map (window partition/merge, nearest resize).
template <class T>
Var<T> gather(Var<T> x, std::vector<int> dims,
              std::shared_ptr<const std::vector<std::int64_t>> idx) {
  Tensor<T> out{std::move(dims)};
  assert(out.size() == static_cast<std::int64_t>(idx->size()));
  for (std::int64_t i = 0; i < out.size(); ++i) out.v[i] = x.val().v[(*idx)[i]];
  Node<T>* px = x.node();
  return x.tape()->make(std::move(out), px->needs, [px, idx](Node<T>& n) {
    if (auto* g = Tape<T>::grad_buf(px))
      for (std::int64_t i = 0; i < n.grad.size(); ++i)
        g->v[(*idx)[i]] += n.grad.v[i];
  });
}

template <class T>
Var<T> concat_last(const std::vector<Var<T>>& xs) {
  assert(!xs.empty());
  std::vector<int> dims = xs[0].val().dims;
  int cat = 0;
  for (const auto& x : xs) cat += x.dim(x.val().rank() - 1);
  int c_out = cat;
  dims.back() = c_out;
  Tensor<T> out{dims};
  std::int64_t rows = out.size() / c_out;
  bool needs = false;
  std::vector<Node<T>*> parents;
  std::vector<int> widths;
  for (const auto& x : xs) {
    parents.push_back(x.node());
    widths.push_back(x.dim(x.val().rank() - 1));
    needs = needs || x.node()->needs;
  }
  for (std::int64_t r = 0; r < rows; ++r) {
    int off = 0;
    for (std::size_t k = 0; k < parents.size(); ++k) {
      const T* src = parents[k]->val.data() + r * widths[k];
      std::copy(src, src + widths[k], out.data() + r * c_out + off);
      off += widths[k];
    }
  }
  return xs[0].tape()->make(
      std::move(out), needs, [parents, widths, rows, c_out](Node<T>& n) {
        int off = 0;
        for (std::size_t k = 0; k < parents.size(); ++k) {
          if (auto* g = Tape<T>::grad_buf(parents[k])) {
            for (std::int64_t r = 0; r < rows; ++r)
              for (int j = 0; j < widths[k]; ++j)
                g->v[r * widths[k] + j] += n.grad.v[r * c_out + off + j];
          }
          off += widths[k];
        }
      });
}

template <class T>
Var<T> slice_last(Var<T> x, int start, int len) {
  int c = x.dim(x.val().rank() - 1);
  assert(start >= 0 && start + len <= c);
  std::vector<int> dims = x.val().dims;
  dims.back() = len;
  Tensor<T> out{dims};
  std::int64_t rows = out.size() / len;
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy(x.val().data() + r * c + start, x.val().data() + r * c + start + len,
              out.data() + r * len);
  Node<T>* px = x.node();
  return x.tape()->make(std::move(out), px->needs,
                        [px, start, len, c, rows](Node<T>& n) {
                          if (auto* g = Tape<T>::grad_buf(px))
                            for (std::int64_t r = 0; r < rows; ++r)
                              for (int j = 0; j < len; ++j)
                                g->v[r * c + start + j] += n.grad.v[r * len + j];
                        });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// (m, k) x (k, n) -> (m, n)
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  assert(a.val().rank() == 2 && b.val().rank() == 2);
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  assert(b.dim(0) == k);
  Tensor<T> out({m, n});
  detail::gemm(a.val().data(), m, k, false, b.val().data(), k, n, false,
               out.data(), false);
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return a.tape()->make(std::move(out), pa->needs || pb->needs,
                        [pa, pb, m, k, n](Node<T>& nd) {
                          if (auto* g = Tape<T>::grad_buf(pa))
                            detail::gemm(nd.grad.data(), m, n, false,
                                         pb->val.data(), k, n, true, g->data(),
                                         true);
                          if (auto* g = Tape<T>::grad_buf(pb))
                            detail::gemm(pa->val.data(), m, k, true,
                                         nd.grad.data(), m, n, false, g->data(),
                                         true);
                        });
}

// Batched (b, m, k) x (b, k, n) -> (b, m, n), with optional transposes of the
// two trailing dims.
template <class T>
Var<T> bmm(Var<T> a, Var<T> b, bool ta = false, bool tb = false) {
  assert(a.val().rank() == 3 && b.val().rank() == 3);
  int B = a.dim(0);
  int ar = a.dim(1), ac = a.dim(2);
  int br = b.dim(1), bc = b.dim(2);
  int m = ta ? ac : ar;
  int kk = ta ? ar : ac;
  int n = tb ? br : bc;
  assert((tb ? bc : br) == kk);
  assert(b.dim(0) == B);
  Tensor<T> out({B, m, n});
  std::int64_t sa = static_cast<std::int64_t>(ar) * ac;
  std::int64_t sb = static_cast<std::int64_t>(br) * bc;
  std::int64_t so = static_cast<std::int64_t>(m) * n;
  for (int i = 0; i < B; ++i)
    detail::gemm(a.val().data() + i * sa, ar, ac, ta, b.val().data() + i * sb,
                 br, bc, tb, out.data() + i * so, false);
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return a.tape()->make(
      std::move(out), pa->needs || pb->needs,
      [pa, pb, B, ar, ac, br, bc, m, n, ta, tb, sa, sb, so](Node<T>& nd) {
        // dA = dC * op(B)^T routed through the transpose flags; same for dB.
        if (auto* g = Tape<T>::grad_buf(pa)) {
          for (int i = 0; i < B; ++i) {
            const T* dc = nd.grad.data() + i * so;
            const T* bp = pb->val.data() + i * sb;
            T* ga = g->data() + i * sa;
            if (!ta)
              detail::gemm(dc, m, n, false, bp, br, bc, !tb, ga, true);
            else if (!tb)
              detail::gemm(bp, br, bc, false, dc, m, n, true, ga, true);
            else
              detail::gemm(bp, br, bc, true, dc, m, n, true, ga, true);
          }
        }
        if (auto* g = Tape<T>::grad_buf(pb)) {
          for (int i = 0; i < B; ++i) {
            const T* dc = nd.grad.data() + i * so;
            const T* ap = pa->val.data() + i * sa;
            T* gb = g->data() + i * sb;
            if (!tb)
              detail::gemm(ap, ar, ac, !ta, dc, m, n, false, gb, true);
            else if (!ta)
              detail::gemm(dc, m, n, true, ap, ar, ac, false, gb, true);
            else
              detail::gemm(dc, m, n, true, ap, ar, ac, true, gb, true);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions and resampling
// ---------------------------------------------------------------------------

// x: (h, w, ci), w: (kh, kw, ci, co), b: (co) or empty var.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  int h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  int kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  assert(w.dim(2) == ci);
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (wd + 2 * pad - kw) / stride + 1;
  int kdim = kh * kw * ci;
  // im2col buffer, shared with the backward pass.
  auto cols = std::make_shared<Tensor<T>>(
      Tensor<T>::zeros({oh * ow, kdim}));
  const T* xd = x.val().data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* row = cols->data() + (static_cast<std::int64_t>(oy) * ow + ox) * kdim;
      for (int ky = 0; ky < kh; ++ky) {
        int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= wd) continue;
          const T* src = xd + (static_cast<std::int64_t>(iy) * wd + ix) * ci;
          std::copy(src, src + ci, row + (ky * kw + kx) * ci);
        }
      }
    }
  }
  Tensor<T> out({oh, ow, co});
  detail::gemm(cols->data(), oh * ow, kdim, false, w.val().data(), kdim, co,
               false, out.data(), false);
  if (b.ok()) {
    for (std::int64_t r = 0; r < static_cast<std::int64_t>(oh) * ow; ++r)
      for (int j = 0; j < co; ++j) out.v[r * co + j] += b.val().v[j];
  }
  Node<T>* px = x.node();
  Node<T>* pw = w.node();
  Node<T>* pb = b.ok() ? b.node() : nullptr;
  bool needs = px->needs || pw->needs || (pb && pb->needs);
  return x.tape()->make(
      std::move(out), needs,
      [px, pw, pb, cols, h, wd, ci, kh, kw, co, oh, ow, stride, pad,
       kdim](Node<T>& nd) {
        std::int64_t rows = static_cast<std::int64_t>(oh) * ow;
        if (auto* g = Tape<T>::grad_buf(pw))
          detail::gemm(cols->data(), oh * ow, kdim, true, nd.grad.data(),
                       oh * ow, co, false, g->data(), true);
        if (pb) {
          if (auto* g = Tape<T>::grad_buf(pb))
            for (std::int64_t r = 0; r < rows; ++r)
              for (int j = 0; j < co; ++j) g->v[j] += nd.grad.v[r * co + j];
        }
        if (auto* g = Tape<T>::grad_buf(px)) {
          Tensor<T> dcols({oh * ow, kdim});
          detail::gemm(nd.grad.data(), oh * ow, co, false, pw->val.data(), kdim,
                       co, true, dcols.data(), false);
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const T* row =
                  dcols.data() + (static_cast<std::int64_t>(oy) * ow + ox) * kdim;
              for (int ky = 0; ky < kh; ++ky) {
                int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= wd) continue;
                  T* dst = g->data() + (static_cast<std::int64_t>(iy) * wd + ix) * ci;
                  const T* src = row + (ky * kw + kx) * ci;
                  for (int cc = 0; cc < ci; ++cc) dst[cc] += src[cc];
                }
              }
            }
          }
        }
      });
}

// Depthwise 3x3, stride 1, pad 1. w: (3, 3, c).
template <class T>
Var<T> dwconv3x3(Var<T> x, Var<T> w) {
  int h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  assert(w.dim(0) == 3 && w.dim(1) == 3 && w.dim(2) == c);
  Tensor<T> out({h, wd, c}, T(0));
  const T* xd = x.val().data();
  const T* wv = w.val().data();
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < wd; ++xx) {
      T* o = out.data() + (static_cast<std::int64_t>(y) * wd + xx) * c;
      for (int ky = 0; ky < 3; ++ky) {
        int iy = y + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          int ix = xx + kx - 1;
          if (ix < 0 || ix >= wd) continue;
          const T* src = xd + (static_cast<std::int64_t>(iy) * wd + ix) * c;
          const T* ww = wv + (ky * 3 + kx) * c;
          for (int cc = 0; cc < c; ++cc) o[cc] += src[cc] * ww[cc];
        }
      }
    }
  }
  Node<T>* px = x.node();
  Node<T>* pw = w.node();
  return x.tape()->make(
      std::move(out), px->needs || pw->needs, [px, pw, h, wd, c](Node<T>& nd) {
        auto* gx = Tape<T>::grad_buf(px);
        auto* gw = Tape<T>::grad_buf(pw);
        for (int y = 0; y < h; ++y) {
          for (int xx = 0; xx < wd; ++xx) {
            const T* dy = nd.grad.data() + (static_cast<std::int64_t>(y) * wd + xx) * c;
            for (int ky = 0; ky < 3; ++ky) {
              int iy = y + ky - 1;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < 3; ++kx) {
                int ix = xx + kx - 1;
                if (ix < 0 || ix >= wd) continue;
                std::int64_t in_off = (static_cast<std::int64_t>(iy) * wd + ix) * c;
                int k_off = (ky * 3 + kx) * c;
                if (gx) {
                  const T* ww = pw->val.data() + k_off;
                  for (int cc = 0; cc < c; ++cc)
                    gx->v[in_off + cc] += dy[cc] * ww[cc];
                }
                if (gw) {
                  const T* src = px->val.data() + in_off;
                  for (int cc = 0; cc < c; ++cc)
                    gw->v[k_off + cc] += dy[cc] * src[cc];
                }
              }
            }
          }
        }
      });
}

template <class T>
Var<T> upsample2_nearest(Var<T> x) {
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>(4) * h * w * c);
  for (int y = 0; y < 2 * h; ++y)
    for (int xx = 0; xx < 2 * w; ++xx)
      for (int cc = 0; cc < c; ++cc)
        idx->push_back(((static_cast<std::int64_t>(y / 2) * w) + xx / 2) * c + cc);
  return gather(x, {2 * h, 2 * w, c}, idx);
}

// Bilinear resize to (oh, ow); half-pixel centers, edges clamped.
template <class T>
Var<T> resize_bilinear(Var<T> x, int oh, int ow) {
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (oh == h && ow == w) return x;
  struct Taps {
    std::vector<int> y0, y1, x0, x1;
    std::vector<T> fy, fx;
  };
  auto taps = std::make_shared<Taps>();
  taps->y0.resize(oh); taps->y1.resize(oh); taps->fy.resize(oh);
  taps->x0.resize(ow); taps->x1.resize(ow); taps->fx.resize(ow);
  auto fill = [](int n, int src_n, std::vector<int>& a0, std::vector<int>& a1,
                 std::vector<T>& f) {
    double scale = static_cast<double>(src_n) / n;
    for (int i = 0; i < n; ++i) {
      double s = (i + 0.5) * scale - 0.5;
      if (s < 0) s = 0;
      if (s > src_n - 1) s = src_n - 1;
      int i0 = static_cast<int>(std::floor(s));
      int i1 = std::min(i0 + 1, src_n - 1);
      a0[i] = i0;
      a1[i] = i1;
      f[i] = static_cast<T>(s - i0);
    }
  };
  fill(oh, h, taps->y0, taps->y1, taps->fy);
  fill(ow, w, taps->x0, taps->x1, taps->fx);
  Tensor<T> out({oh, ow, c});
  const T* xd = x.val().data();
  for (int y = 0; y < oh; ++y) {
    for (int xx = 0; xx < ow; ++xx) {
      T fy = taps->fy[y], fx = taps->fx[xx];
      const T* p00 = xd + (static_cast<std::int64_t>(taps->y0[y]) * w + taps->x0[xx]) * c;
      const T* p01 = xd + (static_cast<std::int64_t>(taps->y0[y]) * w + taps->x1[xx]) * c;
      const T* p10 = xd + (static_cast<std::int64_t>(taps->y1[y]) * w + taps->x0[xx]) * c;
      const T* p11 = xd + (static_cast<std::int64_t>(taps->y1[y]) * w + taps->x1[xx]) * c;
      T* o = out.data() + (static_cast<std::int64_t>(y) * ow + xx) * c;
      for (int cc = 0; cc < c; ++cc)
        o[cc] = (1 - fy) * ((1 - fx) * p00[cc] + fx * p01[cc]) +
                fy * ((1 - fx) * p10[cc] + fx * p11[cc]);
    }
  }
  Node<T>* px = x.node();
  return x.tape()->make(
      std::move(out), px->needs, [px, taps, oh, ow, w, c](Node<T>& nd) {
        auto* g = Tape<T>::grad_buf(px);
        if (!g) return;
        for (int y = 0; y < oh; ++y) {
          for (int xx = 0; xx < ow; ++xx) {
            T fy = taps->fy[y], fx = taps->fx[xx];
            const T* dy = nd.grad.data() + (static_cast<std::int64_t>(y) * ow + xx) * c;
            std::int64_t o00 = (static_cast<std::int64_t>(taps->y0[y]) * w + taps->x0[xx]) * c;
            std::int64_t o01 = (static_cast<std::int64_t>(taps->y0[y]) * w + taps->x1[xx]) * c;
            std::int64_t o10 = (static_cast<std::int64_t>(taps->y1[y]) * w + taps->x0[xx]) * c;
            std::int64_t o11 = (static_cast<std::int64_t>(taps->y1[y]) * w + taps->x1[xx]) * c;
            for (int cc = 0; cc < c; ++cc) {
              T d = dy[cc];
              g->v[o00 + cc] += (1 - fy) * (1 - fx) * d;
              g->v[o01 + cc] += (1 - fy) * fx * d;
              g->v[o10 + cc] += fy * (1 - fx) * d;
              g->v[o11 + cc] += fy * fx * d;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization and nonlinearities
// ---------------------------------------------------------------------------

// Per-location layer norm over the channel dimension.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-5) {
  int c = x.dim(x.val().rank() - 1);
  std::int64_t rows = x.val().size() / c;
  Tensor<T> out = x.val();
  auto xhat = std::make_shared<Tensor<T>>(x.val());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * c;
    double mu = 0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= c;
    double var = 0;
    for (int j = 0; j < c; ++j) {
      double d = row[j] - mu;
      var += d * d;
    }
    var /= c;
    T istd = static_cast<T>(1.0 / std::sqrt(var + eps));
    (*inv_std)[r] = istd;
    T* xh = xhat->data() + r * c;
    for (int j = 0; j < c; ++j) {
      xh[j] = static_cast<T>((row[j] - mu) * istd);
      row[j] = xh[j] * gamma.val().v[j] + beta.val().v[j];
    }
  }
  Node<T>* px = x.node();
  Node<T>* pg = gamma.node();
  Node<T>* pb = beta.node();
  return x.tape()->make(
      std::move(out), px->needs || pg->needs || pb->needs,
      [px, pg, pb, xhat, inv_std, rows, c](Node<T>& nd) {
        auto* gx = Tape<T>::grad_buf(px);
        auto* gg = Tape<T>::grad_buf(pg);
        auto* gb = Tape<T>::grad_buf(pb);
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* dy = nd.grad.data() + r * c;
          const T* xh = xhat->data() + r * c;
          if (gg)
            for (int j = 0; j < c; ++j) gg->v[j] += dy[j] * xh[j];
          if (gb)
            for (int j = 0; j < c; ++j) gb->v[j] += dy[j];
          if (gx) {
            // dx = istd/c * (c*g - sum(g) - xhat*sum(g*xhat)), g = dy*gamma
            double s1 = 0, s2 = 0;
            for (int j = 0; j < c; ++j) {
              double gj = static_cast<double>(dy[j]) * pg->val.v[j];
              s1 += gj;
              s2 += gj * xh[j];
            }
            T istd = (*inv_std)[r];
            for (int j = 0; j < c; ++j) {
              double gj = static_cast<double>(dy[j]) * pg->val.v[j];
              gx->v[r * c + j] += static_cast<T>(
                  istd * (gj - s1 / c - static_cast<double>(xh[j]) * s2 / c));
            }
          }
        }
      });
}

template <class T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.val();
  for (auto& e : out.v) e = e > T(0) ? e : T(0);
  Node<T>* px = x.node();
  return x.tape()->make(std::move(out), px->needs, [px](Node<T>& n) {
    if (auto* g = Tape<T>::grad_buf(px))
      for (std::int64_t i = 0; i < n.grad.size(); ++i)
        if (px->val.v[i] > T(0)) g->v[i] += n.grad.v[i];
  });
}

// tanh-form gelu.
template <class T>
Var<T> gelu(Var<T> x) {
  static constexpr double kA = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kB = 0.044715;
  Tensor<T> out = x.val();
  for (auto& e : out.v) {
    double xv = e;
    double u = kA * (xv + kB * xv * xv * xv);
    e = static_cast<T>(0.5 * xv * (1.0 + std::tanh(u)));
  }
  Node<T>* px = x.node();
  return x.tape()->make(std::move(out), px->needs, [px](Node<T>& n) {
    auto* g = Tape<T>::grad_buf(px);
    if (!g) return;
    for (std::int64_t i = 0; i < n.grad.size(); ++i) {
      double xv = px->val.v[i];
      double u = kA * (xv + kB * xv * xv * xv);
      double t = std::tanh(u);
      double sech2 = 1.0 - t * t;
      double d = 0.5 * (1.0 + t) + 0.5 * xv * sech2 * kA * (1.0 + 3.0 * kB * xv * xv);
      g->v[i] += static_cast<T>(d * static_cast<double>(n.grad.v[i]));
    }
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.val();
  for (auto& e : out.v) e = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(e))));
  Node<T>* px = x.node();
  auto saved = std::make_shared<Tensor<T>>(out);
  return x.tape()->make(std::move(out), px->needs, [px, saved](Node<T>& n) {
    if (auto* g = Tape<T>::grad_buf(px))
      for (std::int64_t i = 0; i < n.grad.size(); ++i) {
        T y = saved->v[i];
        g->v[i] += n.grad.v[i] * y * (T(1) - y);
      }
  });
}

// Softmax over the innermost dimension.
template <class T>
Var<T> softmax_last(Var<T> x) {
  int n = x.dim(x.val().rank() - 1);
  std::int64_t rows = x.val().size() / n;
  Tensor<T> out = x.val();
  for (std::int64_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * n;
    double m = row[0];
    for (int j = 1; j < n; ++j) m = std::max(m, static_cast<double>(row[j]));
    double z = 0;
    for (int j = 0; j < n; ++j) {
      double e = std::exp(static_cast<double>(row[j]) - m);
      row[j] = static_cast<T>(e);
      z += e;
    }
    for (int j = 0; j < n; ++j) row[j] = static_cast<T>(row[j] / z);
  }
  auto saved = std::make_shared<Tensor<T>>(out);
  Node<T>* px = x.node();
  return x.tape()->make(std::move(out), px->needs, [px, saved, rows, n](Node<T>& nd) {
    auto* g = Tape<T>::grad_buf(px);
    if (!g) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = saved->data() + r * n;
      const T* dy = nd.grad.data() + r * n;
      double dot = 0;
      for (int j = 0; j < n; ++j) dot += static_cast<double>(dy[j]) * y[j];
      for (int j = 0; j < n; ++j)
        g->v[r * n + j] += static_cast<T>(y[j] * (dy[j] - dot));
    }
  });
}

// Softmax across task groups: x is (..., N*C); for every location and channel
// c the N entries {x[..., k*C + c]} form one softmax group.
template <class T>
Var<T> softmax_taskgroups(Var<T> x, int num_tasks) {
  int nc = x.dim(x.val().rank() - 1);
  assert(nc % num_tasks == 0);
  int c = nc / num_tasks;
  std::int64_t rows = x.val().size() / nc;
  Tensor<T> out = x.val();
  for (std::int64_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * nc;
    for (int j = 0; j < c; ++j) {
      double m = row[j];
      for (int k = 1; k < num_tasks; ++k)
        m = std::max(m, static_cast<double>(row[k * c + j]));
      double z = 0;
      for (int k = 0; k < num_tasks; ++k) {
        double e = std::exp(static_cast<double>(row[k * c + j]) - m);
        row[k * c + j] = static_cast<T>(e);
        z += e;
      }
      for (int k = 0; k < num_tasks; ++k)
        row[k * c + j] = static_cast<T>(row[k * c + j] / z);
    }
  }
  auto saved = std::make_shared<Tensor<T>>(out);
  Node<T>* px = x.node();
  return x.tape()->make(
      std::move(out), px->needs, [px, saved, rows, c, num_tasks, nc](Node<T>& nd) {
        auto* g = Tape<T>::grad_buf(px);
        if (!g) return;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* y = saved->data() + r * nc;
          const T* dy = nd.grad.data() + r * nc;
          for (int j = 0; j < c; ++j) {
            double dot = 0;
            for (int k = 0; k < num_tasks; ++k)
              dot += static_cast<double>(dy[k * c + j]) * y[k * c + j];
            for (int k = 0; k < num_tasks; ++k)
              g->v[r * nc + k * c + j] +=
                  static_cast<T>(y[k * c + j] * (dy[k * c + j] - dot));
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Quantization surrogates
// ---------------------------------------------------------------------------

// Eval-time rounding, half away from zero, straight-through gradient.
template <class T>
Var<T> round_ste(Var<T> x) {
  Tensor<T> out = x.val();
  for (auto& e : out.v) e = static_cast<T>(std::round(static_cast<double>(e)));
  Node<T>* px = x.node();
  return x.tape()->make(std::move(out), px->needs, [px](Node<T>& n) {
    if (auto* g = Tape<T>::grad_buf(px))
      for (std::int64_t i = 0; i < n.grad.size(); ++i) g->v[i] += n.grad.v[i];
  });
}

// Train-time additive noise, uniform on [-0.5, 0.5).
template <class T>
Var<T> add_uniform_noise(Var<T> x, std::mt19937_64& rng) {
  Tensor<T> out = x.val();
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (auto& e : out.v) e += static_cast<T>(dist(rng));
  Node<T>* px = x.node();
  return x.tape()->make(std::move(out), px->needs, [px](Node<T>& n) {
    if (auto* g = Tape<T>::grad_buf(px))
      for (std::int64_t i = 0; i < n.grad.size(); ++i) g->v[i] += n.grad.v[i];
  });
}

// Clamp with straight-through gradient; keeps training alive when the
// synthesis output saturates.
template <class T>
Var<T> clamp_ste(Var<T> x, double lo, double hi) {
  Tensor<T> out = x.val();
  for (auto& e : out.v)
    e = static_cast<T>(std::min(hi, std::max(lo, static_cast<double>(e))));
  Node<T>* px = x.node();
  return x.tape()->make(std::move(out), px->needs, [px](Node<T>& n) {
    if (auto* g = Tape<T>::grad_buf(px))
      for (std::int64_t i = 0; i < n.grad.size(); ++i) g->v[i] += n.grad.v[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <class T>
Var<T> sum(Var<T> x) {
  double acc = 0;
  for (const auto& e : x.val().v) acc += e;
  Node<T>* px = x.node();
  return x.tape()->make(Tensor<T>::full({1}, static_cast<T>(acc)), px->needs,
                        [px](Node<T>& n) {
                          if (auto* g = Tape<T>::grad_buf(px))
                            for (auto& e : g->v) e += n.grad.v[0];
                        });
}

template <class T>
Var<T> mean(Var<T> x) {
  return affine(sum(x), 1.0 / static_cast<double>(x.val().size()), 0.0);
}

template <class T>
Var<T> add_scalars(const std::vector<Var<T>>& xs) {
  assert(!xs.empty());
  double acc = 0;
  bool needs = false;
  std::vector<Node<T>*> parents;
  for (const auto& x : xs) {
    assert(x.val().size() == 1);
    acc += x.val().v[0];
    parents.push_back(x.node());
    needs = needs || x.node()->needs;
  }
  return xs[0].tape()->make(Tensor<T>::full({1}, static_cast<T>(acc)), needs,
                            [parents](Node<T>& n) {
                              for (auto* p : parents)
                                if (auto* g = Tape<T>::grad_buf(p))
                                  g->v[0] += n.grad.v[0];
                            });
}

template <class T>
Var<T> mse_loss(Var<T> pred, Var<T> target) {
  assert(pred.val().same_shape(target.val()));
  std::int64_t n = pred.val().size();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double d = static_cast<double>(pred.val().v[i]) - target.val().v[i];
    acc += d * d;
  }
  Node<T>* pp = pred.node();
  Node<T>* pt = target.node();
  return pred.tape()->make(
      Tensor<T>::full({1}, static_cast<T>(acc / n)), pp->needs || pt->needs,
      [pp, pt, n](Node<T>& nd) {
        T d0 = nd.grad.v[0];
        if (auto* g = Tape<T>::grad_buf(pp))
          for (std::int64_t i = 0; i < n; ++i)
            g->v[i] += static_cast<T>(2.0 / n) * (pp->val.v[i] - pt->val.v[i]) * d0;
        if (auto* g = Tape<T>::grad_buf(pt))
          for (std::int64_t i = 0; i < n; ++i)
            g->v[i] -= static_cast<T>(2.0 / n) * (pp->val.v[i] - pt->val.v[i]) * d0;
      });
}

template <class T>
Var<T> l1_loss(Var<T> pred, Var<T> target) {
  assert(pred.val().same_shape(target.val()));
  std::int64_t n = pred.val().size();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i)
    acc += std::abs(static_cast<double>(pred.val().v[i]) - target.val().v[i]);
  Node<T>* pp = pred.node();
  Node<T>* pt = target.node();
  return pred.tape()->make(
      Tensor<T>::full({1}, static_cast<T>(acc / n)), pp->needs || pt->needs,
      [pp, pt, n](Node<T>& nd) {
        T d0 = nd.grad.v[0];
        if (auto* g = Tape<T>::grad_buf(pp))
          for (std::int64_t i = 0; i < n; ++i) {
            T s = pp->val.v[i] > pt->val.v[i] ? T(1) : (pp->val.v[i] < pt->val.v[i] ? T(-1) : T(0));
            g->v[i] += s * d0 / static_cast<T>(n);
          }
        if (auto* g = Tape<T>::grad_buf(pt))
          for (std::int64_t i = 0; i < n; ++i) {
            T s = pp->val.v[i] > pt->val.v[i] ? T(1) : (pp->val.v[i] < pt->val.v[i] ? T(-1) : T(0));
            g->v[i] -= s * d0 / static_cast<T>(n);
          }
      });
}

// Per-pixel softmax cross-entropy with integer labels. logits: (h, w, K).
template <class T>
Var<T> cross_entropy_logits(Var<T> logits, const Tensor<int>& labels) {
  int k = logits.dim(2);
  std::int64_t npix = static_cast<std::int64_t>(logits.dim(0)) * logits.dim(1);
  assert(labels.size() == npix);
  auto probs = std::make_shared<Tensor<T>>(logits.val());
  double acc = 0;
  for (std::int64_t p = 0; p < npix; ++p) {
    T* row = probs->data() + p * k;
    double m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, static_cast<double>(row[j]));
    double z = 0;
    for (int j = 0; j < k; ++j) {
      double e = std::exp(static_cast<double>(row[j]) - m);
      row[j] = static_cast<T>(e);
      z += e;
    }
    for (int j = 0; j < k; ++j) row[j] = static_cast<T>(row[j] / z);
    int lbl = labels.v[p];
    acc -= std::log(std::max(static_cast<double>(row[lbl]), 1e-30));
  }
  Node<T>* pl = logits.node();
  auto lbl_copy = std::make_shared<Tensor<int>>(labels);
  return logits.tape()->make(
      Tensor<T>::full({1}, static_cast<T>(acc / npix)), pl->needs,
      [pl, probs, lbl_copy, npix, k](Node<T>& nd) {
        auto* g = Tape<T>::grad_buf(pl);
        if (!g) return;
        T d0 = nd.grad.v[0];
        for (std::int64_t p = 0; p < npix; ++p) {
          for (int j = 0; j < k; ++j)
            g->v[p * k + j] += d0 * probs->v[p * k + j] / static_cast<T>(npix);
          g->v[p * k + lbl_copy->v[p]] -= d0 / static_cast<T>(npix);
        }
      });
}

// Binary cross-entropy on logits. logits: (h, w, 1) or (h, w); targets 0/1.
template <class T>
Var<T> bce_logits(Var<T> logits, const Tensor<T>& targets) {
  std::int64_t n = logits.val().size();
  assert(targets.size() == n);
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double x = logits.val().v[i];
    double y = targets.v[i];
    acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  Node<T>* pl = logits.node();
  auto tgt = std::make_shared<Tensor<T>>(targets);
  return logits.tape()->make(
      Tensor<T>::full({1}, static_cast<T>(acc / n)), pl->needs,
      [pl, tgt, n](Node<T>& nd) {
        auto* g = Tape<T>::grad_buf(pl);
        if (!g) return;
        T d0 = nd.grad.v[0];
        for (std::int64_t i = 0; i < n; ++i) {
          double x = pl->val.v[i];
          double s = 1.0 / (1.0 + std::exp(-x));
          g->v[i] += d0 * static_cast<T>((s - tgt->v[i]) / n);
        }
      });
}

// Estimated code length in bits under a per-channel discretized logistic:
//   p(k) = sigmoid((k + 0.5 - mu)/s) - sigmoid((k - 0.5 - mu)/s),  s = exp(log_s)
// Probabilities are floored at 1e-9 before the log. Differentiable in the
// (possibly noisy, real-valued) symbols and in mu / log_s.
template <class T>
Var<T> rate_logistic_bits(Var<T> y, Var<T> mu, Var<T> log_s) {
  int c = y.dim(y.val().rank() - 1);
  assert(mu.val().size() == c && log_s.val().size() == c);
  static constexpr double kFloor = 1e-9;
  static constexpr double kLn2 = 0.6931471805599453;
  std::int64_t rows = y.val().size() / c;
  double bits = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    for (int j = 0; j < c; ++j) {
      double s = std::exp(static_cast<double>(log_s.val().v[j]));
      double k = y.val().v[r * c + j];
      double m = mu.val().v[j];
      double sa = 1.0 / (1.0 + std::exp(-(k + 0.5 - m) / s));
      double sb = 1.0 / (1.0 + std::exp(-(k - 0.5 - m) / s));
      double p = std::max(sa - sb, kFloor);
      bits -= std::log2(p);
    }
  }
  Node<T>* py = y.node();
  Node<T>* pm = mu.node();
  Node<T>* ps = log_s.node();
  bool needs = py->needs || pm->needs || ps->needs;
  return y.tape()->make(
      Tensor<T>::full({1}, static_cast<T>(bits)), needs,
      [py, pm, ps, rows, c](Node<T>& nd) {
        auto* gy = Tape<T>::grad_buf(py);
        auto* gm = Tape<T>::grad_buf(pm);
        auto* gs = Tape<T>::grad_buf(ps);
        double d0 = nd.grad.v[0];
        for (int j = 0; j < c; ++j) {
          double s = std::exp(static_cast<double>(ps->val.v[j]));
          double m = pm->val.v[j];
          double acc_m = 0, acc_s = 0;
          for (std::int64_t r = 0; r < rows; ++r) {
            double k = py->val.v[r * c + j];
            double a = (k + 0.5 - m) / s;
            double b = (k - 0.5 - m) / s;
            double sa = 1.0 / (1.0 + std::exp(-a));
            double sb = 1.0 / (1.0 + std::exp(-b));
            double p = sa - sb;
            if (p <= kFloor) continue;  // flat region of the floor
            double da = sa * (1.0 - sa);
            double db = sb * (1.0 - sb);
            double dldp = -d0 / (p * kLn2);
            if (gy) gy->v[r * c + j] += static_cast<T>(dldp * (da - db) / s);
            acc_m += dldp * (-(da - db) / s);
            acc_s += dldp * (-(da * a - db * b));
          }
          if (gm) gm->v[j] += static_cast<T>(acc_m);
          if (gs) gs->v[j] += static_cast<T>(acc_s);
        }
      });
}

// L2-normalizes the innermost dimension (unit direction vectors).
template <class T>
Var<T> normalize_last(Var<T> x, double eps = 1e-8) {
  int c = x.dim(x.val().rank() - 1);
  std::int64_t rows = x.val().size() / c;
  Tensor<T> out = x.val();
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * c;
    double s = eps;
    for (int j = 0; j < c; ++j) s += static_cast<double>(row[j]) * row[j];
    double inv = 1.0 / std::sqrt(s);
    (*norms)[r] = inv;
    for (int j = 0; j < c; ++j) row[j] = static_cast<T>(row[j] * inv);
  }
  Node<T>* px = x.node();
  return x.tape()->make(
      std::move(out), px->needs, [px, norms, rows, c](Node<T>& nd) {
        auto* g = Tape<T>::grad_buf(px);
        if (!g) return;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* xv = px->val.data() + r * c;
          const T* dy = nd.grad.data() + r * c;
          double inv = (*norms)[r];
          double dot = 0;
          for (int j = 0; j < c; ++j) dot += static_cast<double>(dy[j]) * xv[j];
          for (int j = 0; j < c; ++j)
            g->v[r * c + j] += static_cast<T>(
                inv * dy[j] - inv * inv * inv * dot * static_cast<double>(xv[j]));
        }
      });
}

// 1 - mean cosine similarity against constant unit targets (h, w, 3).
template <class T>
Var<T> cosine_loss(Var<T> pred, const Tensor<T>& target_units) {
  Var<T> n = normalize_last(pred);
  Var<T> tgt = pred.tape()->leaf(target_units, false);
  Var<T> dots = mul(n, tgt);
  std::int64_t npix = pred.val().size() / pred.dim(pred.val().rank() - 1);
  return affine(sum(dots), -1.0 / static_cast<double>(npix), 1.0);
}

}  // namespace mtac::ag

#endif  // MTAC_AUTODIFF_HPP_
