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

#ifndef MTAC_RANGECODER_HPP_
#define MTAC_RANGECODER_HPP_

#include <cstdint>
#include <vector>

#include "mtac/common.hpp"

namespace mtac {

// 32-bit renormalizing range coder with 64-bit low for carry propagation.
// Frequencies are 16-bit; renormalization keeps range >= 2^24, so the
// per-symbol precision loss stays below ~0.6% worst case.
class RangeEncoder {
 public:
  static constexpr std::uint32_t kTotalBits = 16;
  static constexpr std::uint32_t kTotal = 1u << kTotalBits;
  static constexpr std::uint32_t kTopValue = 1u << 24;

  explicit RangeEncoder(std::vector<std::uint8_t>& out) : out_(out) {}

  void encode(std::uint32_t cum, std::uint32_t freq) {
    range_ >>= kTotalBits;
    low_ += static_cast<std::uint64_t>(cum) * range_;
    range_ *= freq;
    while (range_ < kTopValue) {
      shift_low();
      range_ <<= 8;
    }
  }

  void finish() {
    for (int i = 0; i < 5; ++i) shift_low();
  }

 private:
  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      std::uint8_t carry = static_cast<std::uint8_t>(low_ >> 32);
      out_.push_back(static_cast<std::uint8_t>(cache_ + carry));
      while (--pending_ != 0)
        out_.push_back(static_cast<std::uint8_t>(0xFF + carry));
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    }
    ++pending_;
    low_ = (low_ << 8) & 0xFFFFFFFFull;
  }

  std::vector<std::uint8_t>& out_;
  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 1;
};

class RangeDecoder {
 public:
  static constexpr std::uint32_t kTotalBits = RangeEncoder::kTotalBits;
  static constexpr std::uint32_t kTotal = RangeEncoder::kTotal;
  static constexpr std::uint32_t kTopValue = RangeEncoder::kTopValue;

  // `base_offset` is added to reported byte offsets so container-level
  // errors point into the whole stream, not just the payload.
  RangeDecoder(const std::uint8_t* data, std::size_t size,
               std::uint64_t base_offset = 0)
      : data_(data), size_(size), base_(base_offset) {
    for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
  }

  // Returns a value in [0, kTotal); the caller locates the symbol whose
  // cumulative interval contains it, then calls consume().
  std::uint32_t decode_target() {
    slot_ = range_ >> kTotalBits;
    std::uint32_t v = static_cast<std::uint32_t>(code_ / slot_);
    return v >= kTotal ? kTotal - 1 : v;
  }

  void consume(std::uint32_t cum, std::uint32_t freq) {
    code_ -= static_cast<std::uint64_t>(cum) * slot_;
    range_ = slot_ * freq;
    while (range_ < kTopValue) {
      code_ = ((code_ << 8) | next_byte()) & 0xFFFFFFFFull;
      range_ <<= 8;
    }
  }

 private:
  std::uint8_t next_byte() {
    if (pos_ >= size_)
      throw DecodeError("bitstream payload truncated", base_ + pos_);
    return data_[pos_++];
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::uint64_t base_;
  std::size_t pos_ = 0;
  std::uint64_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t slot_ = 0;
};

}  // namespace mtac

#endif  // MTAC_RANGECODER_HPP_
