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

#ifndef MTAC_ENTROPY_HPP_
#define MTAC_ENTROPY_HPP_

#include <cstdint>
#include <random>
#include <vector>

#include "mtac/autodiff.hpp"
#include "mtac/common.hpp"
#include "mtac/params.hpp"
#include "mtac/tensor.hpp"

namespace mtac {

// Factorized per-channel discretized-logistic entropy model.
struct EntropyModel {
  Tensor<double> means;       // (c)
  Tensor<double> log_scales;  // (c)
  int support = 32;           // symbols live in [-support, support]

  int channels() const { return static_cast<int>(means.size()); }
  int alphabet_size() const { return 2 * support + 1; }

  // Interior bins are sigmoid differences; the edge bins absorb the tails so
  // the alphabet forms a proper distribution for coding.
  std::vector<double> channel_pmf(int channel) const;

  std::uint64_t id() const;
};

template <class T>
EntropyModel snapshot_entropy_model(const ParamStore<T>& params, int support) {
  EntropyModel m;
  m.means = params.at("entropy.mu").value.template cast<double>();
  m.log_scales = params.at("entropy.log_scale").value.template cast<double>();
  m.support = support;
  return m;
}

enum class QuantizeMode { kTrain, kEval };

// Eval: round half away from zero with a straight-through gradient.
// Train: additive uniform noise on [-0.5, 0.5).
template <class T>
ag::Var<T> quantize(ag::Var<T> y, QuantizeMode mode, std::mt19937_64* rng = nullptr) {
  if (mode == QuantizeMode::kEval) return ag::round_ste(y);
  if (!rng) throw TrainingError("train-mode quantization needs a noise source");
  return ag::add_uniform_noise(y, *rng);
}

// Estimated bits for a latent under the model, built on the tape so the
// rate term is differentiable in the symbols and in mu / log_s.
template <class T>
ag::Var<T> rate_bits(ag::Var<T> y_hat, ag::Var<T> mu, ag::Var<T> log_s) {
  return ag::rate_logistic_bits(y_hat, mu, log_s);
}

// Plain-tensor rate estimate (no tape) for evaluation paths.
double rate_bits_plain(const Tensor<double>& y_hat, const EntropyModel& m);

// Quantized coding tables: per channel, cumulative 16-bit frequencies with a
// tie mass of at least 1 per symbol.
struct CodingTables {
  int alphabet = 0;
  int support = 0;
  // freq[c][s], cum[c][s]; cum has alphabet+1 entries per channel.
  std::vector<std::vector<std::uint32_t>> freq;
  std::vector<std::vector<std::uint32_t>> cum;
};

CodingTables build_coding_tables(const EntropyModel& m);
CodingTables build_coding_tables_from_pmf(const std::vector<std::vector<double>>& pmf,
                                          int support);

// Largest-remainder quantization of a pmf to 16-bit integer frequencies,
// every symbol keeping mass >= 1.
std::vector<std::uint32_t> quantize_pmf(const std::vector<double>& pmf);

struct LatentCode {
  Tensor<int> symbols;  // (h, w, c)
  std::uint64_t model_id = 0;
};

struct Bitstream {
  std::vector<std::uint8_t> bytes;

  void save(const std::string& path) const;
  static Bitstream load(const std::string& path);
};

struct BitstreamHeader {
  int height = 0;
  int width = 0;
  int channels = 0;
  int support = 0;
  std::uint32_t payload_len = 0;
};

constexpr std::size_t kBitstreamHeaderSize = 17;

BitstreamHeader parse_bitstream_header(const std::vector<std::uint8_t>& bytes);

struct EncodeResult {
  Bitstream stream;
  std::int64_t clamped_count = 0;  // symbols clamped into [-K, K]
};

EncodeResult encode_bitstream(const LatentCode& code, const EntropyModel& m);
EncodeResult encode_bitstream_with_tables(const Tensor<int>& symbols,
                                          const CodingTables& tables);
LatentCode decode_bitstream(const Bitstream& b, const EntropyModel& m);
Tensor<int> decode_bitstream_with_tables(const Bitstream& b,
                                         const CodingTables& tables);

// Rounds a real latent to integer symbols (half away from zero).
Tensor<int> latent_to_symbols(const Tensor<double>& y);

}  // namespace mtac

#endif  // MTAC_ENTROPY_HPP_
