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

#include "mtac/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mtac/rangecoder.hpp"

namespace mtac {

namespace {

double logistic_cdf(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void put_be16(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

std::uint32_t get_be16(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 8) | p[1];
}

std::uint32_t get_be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

}  // namespace

std::vector<double> EntropyModel::channel_pmf(int channel) const {
  int k = support;
  double mu = means.v[channel];
  double s = std::exp(log_scales.v[channel]);
  std::vector<double> pmf(alphabet_size());
  double prev = 0.0;  // cdf below -K - 0.5 folded into the low edge
  for (int sym = -k; sym <= k; ++sym) {
    double hi = sym == k ? 1.0 : logistic_cdf((sym + 0.5 - mu) / s);
    pmf[sym + k] = hi - prev;
    prev = hi;
  }
  return pmf;
}

std::uint64_t EntropyModel::id() const {
  std::uint64_t h = fnv1a64(means.data(), means.size() * sizeof(double));
  h = fnv1a64(log_scales.data(), log_scales.size() * sizeof(double), h);
  return fnv1a64(&support, sizeof(support), h);
}

double rate_bits_plain(const Tensor<double>& y_hat, const EntropyModel& m) {
  int c = m.channels();
  std::int64_t rows = y_hat.size() / c;
  double bits = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    for (int j = 0; j < c; ++j) {
      double s = std::exp(m.log_scales.v[j]);
      double k = y_hat.v[r * c + j];
      double mu = m.means.v[j];
      double p = logistic_cdf((k + 0.5 - mu) / s) - logistic_cdf((k - 0.5 - mu) / s);
      bits -= std::log2(std::max(p, 1e-9));
    }
  }
  return bits;
}

std::vector<std::uint32_t> quantize_pmf(const std::vector<double>& pmf) {
  const std::uint32_t total = RangeEncoder::kTotal;
  const std::size_t n = pmf.size();
  if (n == 0 || n >= total) throw ConfigError("pmf alphabet size out of range");
  double mass = std::accumulate(pmf.begin(), pmf.end(), 0.0);
  if (mass <= 0) throw ConfigError("pmf has no mass");
  // Largest-remainder rounding onto (total - n) grains, one grain reserved
  // per symbol so nothing gets zero frequency.
  std::uint32_t grains = total - static_cast<std::uint32_t>(n);
  std::vector<std::uint32_t> freq(n, 1);
  std::vector<std::pair<double, std::size_t>> rema(n);
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double ideal = pmf[i] / mass * grains;
    auto base = static_cast<std::uint64_t>(std::floor(ideal));
    freq[i] += static_cast<std::uint32_t>(base);
    assigned += base;
    rema[i] = {ideal - static_cast<double>(base), i};
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::uint64_t left = grains - assigned;
  for (std::size_t i = 0; i < left; ++i) freq[rema[i % n].second] += 1;
  return freq;
}

CodingTables build_coding_tables_from_pmf(
    const std::vector<std::vector<double>>& pmf, int support) {
  CodingTables t;
  t.support = support;
  t.alphabet = 2 * support + 1;
  t.freq.reserve(pmf.size());
  t.cum.reserve(pmf.size());
  for (const auto& p : pmf) {
    if (static_cast<int>(p.size()) != t.alphabet)
      throw ConfigError("pmf size does not match support");
    auto f = quantize_pmf(p);
    std::vector<std::uint32_t> c(p.size() + 1, 0);
    for (std::size_t i = 0; i < f.size(); ++i) c[i + 1] = c[i] + f[i];
    t.freq.push_back(std::move(f));
    t.cum.push_back(std::move(c));
  }
  return t;
}

CodingTables build_coding_tables(const EntropyModel& m) {
  std::vector<std::vector<double>> pmf(m.channels());
  for (int c = 0; c < m.channels(); ++c) pmf[c] = m.channel_pmf(c);
  return build_coding_tables_from_pmf(pmf, m.support);
}

Tensor<int> latent_to_symbols(const Tensor<double>& y) {
  Tensor<int> s;
  s.dims = y.dims;
  s.v.resize(y.v.size());
  for (std::size_t i = 0; i < y.v.size(); ++i)
    s.v[i] = static_cast<int>(std::llround(y.v[i]));
  return s;
}

EncodeResult encode_bitstream_with_tables(const Tensor<int>& symbols,
                                          const CodingTables& tables) {
  if (symbols.rank() != 3) throw ShapeError("latent symbols must be (h, w, c)");
  int h = symbols.dim(0), w = symbols.dim(1), c = symbols.dim(2);
  if (static_cast<int>(tables.freq.size()) != c)
    throw ShapeError("coding tables cover " + std::to_string(tables.freq.size()) +
                     " channels, latent has " + std::to_string(c));
  EncodeResult res;
  auto& out = res.stream.bytes;
  out.reserve(kBitstreamHeaderSize + static_cast<std::size_t>(symbols.size() / 3) + 64);
  out.push_back('M');
  out.push_back('T');
  out.push_back('A');
  out.push_back('C');
  out.push_back(1);  // version
  put_be16(out, static_cast<std::uint32_t>(h));
  put_be16(out, static_cast<std::uint32_t>(w));
  put_be16(out, static_cast<std::uint32_t>(c));
  put_be16(out, static_cast<std::uint32_t>(tables.support));
  std::size_t len_pos = out.size();
  put_be32(out, 0);  // payload length, patched below

  int k = tables.support;
  if (symbols.size() > 0) {
    RangeEncoder enc(out);
    for (std::int64_t i = 0; i < symbols.size(); ++i) {
      int ch = static_cast<int>(i % c);
      int sym = symbols.v[i];
      if (sym < -k) {
        sym = -k;
        ++res.clamped_count;
      } else if (sym > k) {
        sym = k;
        ++res.clamped_count;
      }
      int idx = sym + k;
      enc.encode(tables.cum[ch][idx], tables.freq[ch][idx]);
    }
    enc.finish();
  }
  std::uint32_t payload = static_cast<std::uint32_t>(out.size() - len_pos - 4);
  out[len_pos] = static_cast<std::uint8_t>(payload >> 24);
  out[len_pos + 1] = static_cast<std::uint8_t>((payload >> 16) & 0xFF);
  out[len_pos + 2] = static_cast<std::uint8_t>((payload >> 8) & 0xFF);
  out[len_pos + 3] = static_cast<std::uint8_t>(payload & 0xFF);
  return res;
}

EncodeResult encode_bitstream(const LatentCode& code, const EntropyModel& m) {
  auto res = encode_bitstream_with_tables(code.symbols, build_coding_tables(m));
  return res;
}

BitstreamHeader parse_bitstream_header(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kBitstreamHeaderSize)
    throw FormatError("bitstream shorter than header (" +
                      std::to_string(bytes.size()) + " bytes)");
  if (bytes[0] != 'M' || bytes[1] != 'T' || bytes[2] != 'A' || bytes[3] != 'C')
    throw FormatError("bad bitstream magic");
  if (bytes[4] != 1)
    throw FormatError("unsupported bitstream version " + std::to_string(bytes[4]));
  BitstreamHeader h;
  h.height = static_cast<int>(get_be16(&bytes[5]));
  h.width = static_cast<int>(get_be16(&bytes[7]));
  h.channels = static_cast<int>(get_be16(&bytes[9]));
  h.support = static_cast<int>(get_be16(&bytes[11]));
  h.payload_len = get_be32(&bytes[13]);
  return h;
}

Tensor<int> decode_bitstream_with_tables(const Bitstream& b,
                                         const CodingTables& tables) {
  BitstreamHeader hd = parse_bitstream_header(b.bytes);
  if (hd.support != tables.support)
    throw FormatError("bitstream support " + std::to_string(hd.support) +
                      " does not match model support " +
                      std::to_string(tables.support));
  if (hd.channels != static_cast<int>(tables.freq.size()))
    throw FormatError("bitstream channel count does not match model");
  if (b.bytes.size() < kBitstreamHeaderSize + hd.payload_len)
    throw DecodeError("bitstream payload truncated", b.bytes.size());
  Tensor<int> symbols({hd.height, hd.width, hd.channels});
  if (symbols.size() == 0) return symbols;

  RangeDecoder dec(b.bytes.data() + kBitstreamHeaderSize, hd.payload_len,
                   kBitstreamHeaderSize);
  int c = hd.channels;
  for (std::int64_t i = 0; i < symbols.size(); ++i) {
    int ch = static_cast<int>(i % c);
    const auto& cum = tables.cum[ch];
    std::uint32_t target = dec.decode_target();
    // Binary search for the containing cumulative interval.
    auto it = std::upper_bound(cum.begin(), cum.end(), target);
    int idx = static_cast<int>(it - cum.begin()) - 1;
    dec.consume(cum[idx], tables.freq[ch][idx]);
    symbols.v[i] = idx - tables.support;
  }
  return symbols;
}

LatentCode decode_bitstream(const Bitstream& b, const EntropyModel& m) {
  LatentCode code;
  code.symbols = decode_bitstream_with_tables(b, build_coding_tables(m));
  code.model_id = m.id();
  return code;
}

void Bitstream::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open bitstream for writing: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing bitstream: " + path);
}

Bitstream Bitstream::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw IoError("cannot open bitstream: " + path);
  auto n = static_cast<std::size_t>(is.tellg());
  is.seekg(0);
  Bitstream b;
  b.bytes.resize(n);
  is.read(reinterpret_cast<char*>(b.bytes.data()), static_cast<std::streamsize>(n));
  if (!is) throw IoError("failed reading bitstream: " + path);
  return b;
}

}  // namespace mtac
