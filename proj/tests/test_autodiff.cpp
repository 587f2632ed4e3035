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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>
#include <random>

#include "gradcheck.hpp"
#include "mtac/autodiff.hpp"
#include "mtac/codec_core.hpp"
#include "mtac/spectral.hpp"

using namespace mtac;
using mtac::testutil::gradcheck;
namespace agd = mtac::ag;

namespace {

Tensor<double> rnd(std::vector<int> dims, std::uint64_t seed, double scale = 1.0) {
  return Tensor<double>::randn(std::move(dims), scale, seed);
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  auto r = gradcheck(
      [](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto y = agd::mul(agd::add(in[0], in[1]), agd::sub(in[0], in[2]));
        return agd::mean(agd::mul(y, y));
      },
      {rnd({3, 4, 2}, 1), rnd({3, 4, 2}, 2), rnd({3, 4, 2}, 3)});
  CHECK(r.max_rel_err < kTol);
}

TEST_CASE("affine and scale_by") {
  auto r = gradcheck(
      [](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto y = agd::affine(in[0], 2.5, -0.3);
        return agd::sum(agd::mul(scale_by(y, in[1]), y));
      },
      {rnd({4, 4, 3}, 4), rnd({1}, 5)});
  CHECK(r.max_rel_err < kTol);
}

TEST_CASE("bias_add, matmul") {
  auto r = gradcheck(
      [](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto y = agd::bias_add(agd::matmul(in[0], in[1]), in[2]);
        return agd::mean(agd::mul(y, y));
      },
      {rnd({5, 3}, 6), rnd({3, 4}, 7), rnd({4}, 8)});
  CHECK(r.max_rel_err < kTol);
}

TEST_CASE("bmm all transpose combinations") {
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      CAPTURE(ta);
      CAPTURE(tb);
      std::vector<int> da = ta ? std::vector<int>{2, 3, 4} : std::vector<int>{2, 4, 3};
      std::vector<int> db = tb ? std::vector<int>{2, 5, 3} : std::vector<int>{2, 3, 5};
      auto r = gradcheck(
          [ta, tb](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
            auto y = agd::bmm(in[0], in[1], ta, tb);
            return agd::mean(agd::mul(y, y));
          },
          {rnd(da, 9), rnd(db, 10)});
      CHECK(r.max_rel_err < kTol);
    }
  }
}

TEST_CASE("gather and reshape round trip") {
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  for (int i = 23; i >= 0; --i) idx->push_back(i);
  auto r = gradcheck(
      [idx](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto y = agd::gather(in[0], {4, 6}, idx);
        return agd::mean(agd::mul(y, agd::reshape(in[0], {4, 6})));
      },
      {rnd({2, 3, 4}, 11)});
  CHECK(r.max_rel_err < kTol);
}

TEST_CASE("concat and slice") {
  auto r = gradcheck(
      [](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto y = agd::concat_last(std::vector<agd::Var<double>>{in[0], in[1]});
        auto s = agd::slice_last(y, 1, 3);
        return agd::mean(agd::mul(s, s));
      },
      {rnd({3, 3, 2}, 12), rnd({3, 3, 3}, 13)});
  CHECK(r.max_rel_err < kTol);
}

TEST_CASE("conv2d stride 1 and 2") {
  for (int stride : {1, 2}) {
    CAPTURE(stride);
    auto r = gradcheck(
        [stride](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
          auto y = agd::conv2d(in[0], in[1], in[2], stride, 1);
          return agd::mean(agd::mul(y, y));
        },
        {rnd({6, 6, 3}, 14), rnd({3, 3, 3, 4}, 15, 0.5), rnd({4}, 16)});
    CHECK(r.max_rel_err < kTol);
  }
}

TEST_CASE("depthwise conv3x3") {
  auto r = gradcheck(
      [](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto y = agd::dwconv3x3(in[0], in[1]);
        return agd::mean(agd::mul(y, y));
      },
      {rnd({5, 7, 3}, 17), rnd({3, 3, 3}, 18, 0.5)});
  CHECK(r.max_rel_err < kTol);
}

TEST_CASE("upsample and bilinear resize") {
  auto r = gradcheck(
      [](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto up = agd::upsample2_nearest(in[0]);
        auto rs = agd::resize_bilinear(in[1], 8, 8);
        return agd::mean(agd::mul(up, rs));
      },
      {rnd({4, 4, 2}, 19), rnd({3, 5, 2}, 20)});
  CHECK(r.max_rel_err < kTol);
}

TEST_CASE("layer norm") {
  auto r = gradcheck(
      [](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto y = agd::layer_norm(in[0], in[1], in[2]);
        return agd::mean(agd::mul(y, y));
      },
      {rnd({3, 4, 5}, 21), rnd({5}, 22, 0.3), rnd({5}, 23, 0.3)});
  CHECK(r.max_rel_err < 2e-4);
}

TEST_CASE("nonlinearities") {
  auto r = gradcheck(
      [](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto y = agd::gelu(in[0]);
        y = agd::add(y, agd::sigmoid(in[0]));
        y = agd::add(y, agd::relu(agd::affine(in[0], 1.0, 0.37)));
        return agd::mean(agd::mul(y, y));
      },
      {rnd({4, 4, 3}, 24)});
  CHECK(r.max_rel_err < kTol);
}

TEST_CASE("softmax rows and task groups") {
  auto r = gradcheck(
      [](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto y = agd::softmax_last(in[0]);
        auto z = agd::softmax_taskgroups(in[1], 3);
        return agd::add(agd::mean(agd::mul(y, y)), agd::mean(agd::mul(z, z)));
      },
      {rnd({2, 4, 5}, 25), rnd({2, 2, 9}, 26)});
  CHECK(r.max_rel_err < kTol);

  // group normalization: the 3 task copies of each channel sum to 1
  agd::Tape<double> tape;
  auto x = tape.leaf(rnd({2, 2, 9}, 27));
  auto sm = agd::softmax_taskgroups(x, 3);
  for (int r2 = 0; r2 < 4; ++r2)
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += sm.val().v[r2 * 9 + k * 3 + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("straight-through ops pass gradients and quantize values") {
  agd::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1, 1, 4}), true);
  auto& xv = const_cast<Tensor<double>&>(x.val());
  xv.v = {1.4, -1.5, 0.5, 2.0};
  auto y = agd::round_ste(x);
  CHECK(y.val().v[0] == 1.0);
  CHECK(y.val().v[1] == -2.0);  // half away from zero
  CHECK(y.val().v[2] == 1.0);
  auto c = agd::clamp_ste(y, 0.0, 1.0);
  auto loss = agd::sum(c);
  tape.backward(loss);
  for (int i = 0; i < 4; ++i) CHECK(x.grad().v[i] == 1.0);
}

TEST_CASE("train-mode noise stays in [-0.5, 0.5)") {
  agd::Tape<double> tape;
  auto x = tape.leaf(rnd({8, 8, 2}, 28));
  std::mt19937_64 rng(7);
  auto y = agd::add_uniform_noise(x, rng);
  for (std::int64_t i = 0; i < y.val().size(); ++i) {
    double d = y.val().v[i] - x.val().v[i];
    CHECK(d >= -0.5);
    CHECK(d < 0.5);
  }
}

TEST_CASE("losses match finite differences") {
  Tensor<int> labels({3, 3});
  for (int i = 0; i < 9; ++i) labels.v[i] = i % 4;
  Tensor<double> bin({3, 3, 1});
  for (int i = 0; i < 9; ++i) bin.v[i] = (i % 2) ? 1.0 : 0.0;
  Tensor<double> units = rnd({3, 3, 3}, 29);
  {
    agd::Tape<double> t0(false);
    auto u = t0.leaf(units);
    units = agd::normalize_last(u).val();
  }
  auto r = gradcheck(
      [&](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto l1 = agd::mse_loss(in[0], in[1]);
        auto l2 = agd::cross_entropy_logits(in[2], labels);
        auto l3 = agd::bce_logits(in[3], bin);
        auto l4 = agd::cosine_loss(in[4], units);
        auto l5 = agd::l1_loss(in[0], in[1]);
        return agd::add_scalars<double>({l1, l2, l3, l4, l5});
      },
      {rnd({3, 3, 2}, 30), rnd({3, 3, 2}, 31), rnd({3, 3, 4}, 32),
       rnd({3, 3, 1}, 33), rnd({3, 3, 3}, 34)});
  CHECK(r.max_rel_err < kTol);
}

TEST_CASE("rate op: single-symbol value and gradients") {
  // p(0 | mu=0, s=1) = sigmoid(0.5) - sigmoid(-0.5) = 0.244918…
  agd::Tape<double> tape;
  auto y = tape.leaf(Tensor<double>::zeros({1, 1, 1}));
  auto mu = tape.leaf(Tensor<double>::zeros({1}));
  auto ls = tape.leaf(Tensor<double>::zeros({1}));
  auto bits = agd::rate_logistic_bits(y, mu, ls);
  CHECK(bits.val().v[0] == doctest::Approx(2.0297).epsilon(1e-3));

  auto r = gradcheck(
      [](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        return agd::rate_logistic_bits(in[0], in[1], in[2]);
      },
      {rnd({4, 4, 3}, 35, 2.0), rnd({3}, 36, 0.5), rnd({3}, 37, 0.3)});
  CHECK(r.max_rel_err < kTol);
}

TEST_CASE("rate is additive over elements") {
  agd::Tape<double> tape(false);
  auto y = tape.leaf(rnd({4, 4, 2}, 38, 2.0));
  auto mu = tape.leaf(rnd({2}, 39, 0.5));
  auto ls = tape.leaf(rnd({2}, 40, 0.3));
  double total = agd::rate_logistic_bits(y, mu, ls).val().v[0];
  double acc = 0;
  for (int i = 0; i < 16; ++i) {
    Tensor<double> one({1, 1, 2});
    one.v = {y.val().v[2 * i], y.val().v[2 * i + 1]};
    auto v = tape.leaf(one);
    acc += agd::rate_logistic_bits(v, mu, ls).val().v[0];
  }
  CHECK(total == doctest::Approx(acc).epsilon(1e-9));
}

TEST_CASE("rate concentrates as scale shrinks") {
  agd::Tape<double> tape(false);
  auto y = tape.leaf(Tensor<double>::zeros({1, 1, 1}));
  auto mu = tape.leaf(Tensor<double>::zeros({1}));
  auto ls = tape.leaf(Tensor<double>::full({1}, std::log(1e-3)));
  CHECK(agd::rate_logistic_bits(y, mu, ls).val().v[0] < 1e-6);
}

TEST_CASE("spectral filter matches a naive DFT oracle") {
  // Independent O(n^2)-per-axis oracle evaluating the full 2-D DFT sums.
  const int h = 8, w = 8, c = 2;
  Tensor<double> x = rnd({h, w, c}, 41);
  Tensor<double> m = Tensor<double>::rand_uniform({h, w / 2 + 1, c}, 0.0, 1.5, 42);

  auto mask_full = [&](int u, int v, int cc) {
    if (v <= w / 2) return m.at(u, v, cc);
    return m.at((h - u) % h, w - v, cc);
  };
  Tensor<double> oracle({h, w, c});
  for (int cc = 0; cc < c; ++cc) {
    std::vector<std::complex<double>> spec(h * w);
    for (int u = 0; u < h; ++u)
      for (int v = 0; v < w; ++v) {
        std::complex<double> s = 0;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            double ang = -2.0 * M_PI * (static_cast<double>(u) * y / h +
                                        static_cast<double>(v) * xx / w);
            s += x.at(y, xx, cc) * std::complex<double>(std::cos(ang), std::sin(ang));
          }
        spec[u * w + v] = s * mask_full(u, v, cc);
      }
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        std::complex<double> s = 0;
        for (int u = 0; u < h; ++u)
          for (int v = 0; v < w; ++v) {
            double ang = 2.0 * M_PI * (static_cast<double>(u) * y / h +
                                       static_cast<double>(v) * xx / w);
            s += spec[u * w + v] * std::complex<double>(std::cos(ang), std::sin(ang));
          }
        oracle.at(y, xx, cc) = s.real() / (h * w);
      }
  }

  agd::Tape<double> tape(false);
  auto got = agd::spectral_filter(tape.leaf(x), tape.leaf(m));
  CHECK(max_abs_diff(got.val(), oracle) < 1e-4);
}

TEST_CASE("spectral filter gradients (input and mask)") {
  auto r = gradcheck(
      [](agd::Tape<double>& t, std::vector<agd::Var<double>>& in) {
        auto y = agd::spectral_filter(in[0], in[1]);
        return agd::mean(agd::mul(y, y));
      },
      {rnd({6, 6, 2}, 43), Tensor<double>::rand_uniform({6, 4, 2}, 0.2, 1.2, 44)},
      8);
  CHECK(r.max_rel_err < kTol);
}

TEST_CASE("all-ones mask with zero dw-kernel reproduces the input") {
  const int h = 6, w = 6, c = 3;
  Tensor<double> x = rnd({h, w, c}, 45);
  agd::Tape<double> tape(false);
  auto y = agd::spectral_filter(tape.leaf(x), tape.leaf(Tensor<double>::full({h, w / 2 + 1, c}, 1.0)));
  CHECK(max_abs_diff(y.val(), x) < 1e-10);
}

TEST_CASE("grad pruning: metric-only branches get no gradient buffers") {
  agd::Tape<double> tape;
  auto x = tape.leaf(rnd({3, 3, 2}, 46), true);
  auto frozen = tape.leaf(rnd({3, 3, 2}, 47), false);
  auto side = agd::mul(frozen, frozen);  // never feeds the loss
  auto loss = agd::mean(agd::mul(x, frozen));
  tape.backward(loss);
  CHECK(x.has_grad());
  CHECK(!side.has_grad());
  CHECK(!frozen.has_grad());
}
