// Copyright 2026 The EDIC Authors
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

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "edic/entropy.hpp"

namespace edic {

/// Integer symbols, each coded with tables[table_refs[i]].
struct SymbolStream {
  std::vector<long> symbols;
  std::vector<std::size_t> table_refs;
};

/// Range encoder over 32-bit state with carry propagation. Frequencies are
/// given against a power-of-two total. The flush writes the fewest bytes that
/// pin down the final interval, so the stream is a prefix-free codeword.
class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq, int total_bits);
  void encode_bit(bool bit);  // probability exactly 1/2
  /// Flushes and returns the byte string; the encoder is left empty.
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  bool leading_ = true;  // the first emitted byte is always zero and dropped
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  /// DecodeError on empty input.
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);

  /// Symbol index s with cdf[s] <= target < cdf[s+1].
  std::size_t decode(std::span<const std::uint32_t> cdf, int total_bits);
  bool decode_bit();
  /// DecodeError unless the input is exactly the encoder's output for the
  /// symbols decoded so far; catches truncation and trailing bytes.
  void finish() const;
  /// Byte positions read so far, including implied trailing zeros.
  std::size_t position() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t window_ = 0;  // last four bytes read
};

/// Codes every symbol; values outside a table's window go through its escape
/// symbol followed by a sign bit and an order-0 Exp-Golomb magnitude.
/// CoderError for out-of-window values on tables without an escape.
std::vector<std::uint8_t> range_encode(const SymbolStream& stream,
                                       const std::vector<CdfTable>& tables);

/// Inverse of range_encode. DecodeError on truncated or trailing input.
std::vector<long> range_decode(std::span<const std::uint8_t> bytes,
                               const std::vector<CdfTable>& tables,
                               std::span<const std::size_t> table_refs);

struct CodeCost {
  double bits = 0.0;          // sum of -log2 table probabilities plus raw bits
  std::size_t escapes = 0;
};

/// Ideal cost of a stream under its quantized tables.
CodeCost table_cost(const SymbolStream& stream, const std::vector<CdfTable>& tables);

}  // namespace edic
