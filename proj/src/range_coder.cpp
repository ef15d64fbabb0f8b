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

#include "edic/range_coder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "edic/error.hpp"

namespace edic {

namespace {

constexpr std::uint32_t kTop = 1u << 24;
constexpr long kMaxMagnitude = 1L << 40;

struct Escape {
  bool negative;
  std::uint64_t value;  // distance beyond the window edge, >= 0
};

// Window edge distance of an out-of-window symbol.
Escape escape_of(long v, const CdfTable& t) {
  const long center = t.min_symbol + static_cast<long>(t.regular_symbols() / 2);
  const long radius = static_cast<long>(t.regular_symbols() / 2);
  const long d = v - center;
  return {d < 0, static_cast<std::uint64_t>(std::abs(d) - radius - 1)};
}

int exp_golomb_length(std::uint64_t u) {
  return 2 * (std::bit_width(u + 1) - 1) + 1;
}

struct Flush {
  int dropped;          // trailing zero bytes left out of the stream
  std::uint64_t value;  // code value written, aligned to 256^dropped
};

// Shortest byte string whose whole continuation interval lies inside
// [low, low + range). Only low mod 2^32 matters, so encoder and decoder
// derive the same choice.
Flush choose_flush(std::uint64_t low, std::uint64_t range) {
  for (int d = 3; d > 0; --d) {
    const std::uint64_t step = std::uint64_t{1} << (8 * d);
    const std::uint64_t v = (low + step - 1) & ~(step - 1);
    if (v + step <= low + range) return {d, v};
  }
  return {0, low};
}

void check_table(const CdfTable& t) {
  if (t.cdf.size() < 2 || t.cdf.front() != 0 || t.cdf.back() != (1u << kPrecisionBits)) {
    throw CoderError("malformed cdf table");
  }
  if (t.has_escape && t.regular_symbols() % 2 == 0) {
    throw CoderError("escape tables need an odd, centered window");
  }
}

}  // namespace

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      if (leading_) {
        leading_ = false;
      } else {
        out_.push_back(static_cast<std::uint8_t>(temp + carry));
      }
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(std::uint32_t cum, std::uint32_t freq, int total_bits) {
  const std::uint64_t r = range_;
  const std::uint64_t lo = (r * cum) >> total_bits;
  const std::uint64_t hi = (r * (cum + freq)) >> total_bits;
  low_ += lo;
  range_ = static_cast<std::uint32_t>(hi - lo);
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_bit(bool bit) { encode(bit ? 1 : 0, 1, 1); }

std::vector<std::uint8_t> RangeEncoder::finish() {
  const Flush f = choose_flush(low_, range_);
  low_ = f.value;
  for (int i = 0; i < 5 - f.dropped; ++i) shift_low();
  std::vector<std::uint8_t> out = std::move(out_);
  *this = RangeEncoder();
  return out;
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  if (bytes.empty()) throw DecodeError("empty range stream");
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  // Past the end the stream continues with the zeros the encoder left out.
  const std::uint8_t b = pos_ < bytes_.size() ? bytes_[pos_] : 0;
  if (++pos_ > bytes_.size() + 3) throw DecodeError("range stream truncated");
  window_ = (window_ << 8) | b;
  return b;
}

void RangeDecoder::finish() const {
  if (pos_ < bytes_.size()) {
    throw DecodeError("range stream has " + std::to_string(bytes_.size() - pos_) +
                      " trailing bytes");
  }
  const std::uint32_t low = window_ - code_;
  const Flush f = choose_flush(low, range_);
  if (pos_ - bytes_.size() != static_cast<std::size_t>(f.dropped) ||
      static_cast<std::uint32_t>(f.value) != window_) {
    throw DecodeError("range stream truncated or corrupt");
  }
}

std::size_t RangeDecoder::decode(std::span<const std::uint32_t> cdf, int total_bits) {
  const std::uint64_t r = range_;
  const std::uint64_t target =
      (((static_cast<std::uint64_t>(code_) + 1) << total_bits) - 1) / r;
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
  if (it == cdf.begin() || it == cdf.end()) throw DecodeError("range stream corrupt");
  const std::size_t s = static_cast<std::size_t>(it - cdf.begin()) - 1;
  const std::uint64_t lo = (r * cdf[s]) >> total_bits;
  const std::uint64_t hi = (r * cdf[s + 1]) >> total_bits;
  code_ -= static_cast<std::uint32_t>(lo);
  range_ = static_cast<std::uint32_t>(hi - lo);
  while (range_ < kTop) {
    range_ <<= 8;
    code_ = (code_ << 8) | next_byte();
  }
  return s;
}

bool RangeDecoder::decode_bit() {
  static constexpr std::uint32_t kHalf[3] = {0, 1, 2};
  return decode(kHalf, 1) == 1;
}

std::vector<std::uint8_t> range_encode(const SymbolStream& stream,
                                       const std::vector<CdfTable>& tables) {
  if (stream.symbols.size() != stream.table_refs.size()) {
    throw CoderError("symbol stream: symbols and table refs differ in length");
  }
  for (const CdfTable& t : tables) check_table(t);
  if (stream.symbols.empty()) return {};
  RangeEncoder enc;
  for (std::size_t i = 0; i < stream.symbols.size(); ++i) {
    if (stream.table_refs[i] >= tables.size()) {
      throw CoderError("symbol " + std::to_string(i) + ": table ref out of range");
    }
    const CdfTable& t = tables[stream.table_refs[i]];
    const long v = stream.symbols[i];
    const long index = v - t.min_symbol;
    if (index >= 0 && static_cast<std::size_t>(index) < t.regular_symbols()) {
      const auto s = static_cast<std::size_t>(index);
      enc.encode(t.cdf[s], t.frequency(s), kPrecisionBits);
      continue;
    }
    if (!t.has_escape) {
      throw CoderError("symbol " + std::to_string(v) + " outside table support");
    }
    if (std::abs(v) > kMaxMagnitude || std::abs(t.min_symbol) > kMaxMagnitude) {
      throw CoderError("symbol magnitude beyond escape range");
    }
    const std::size_t esc = t.regular_symbols();
    enc.encode(t.cdf[esc], t.frequency(esc), kPrecisionBits);
    const Escape e = escape_of(v, t);
    enc.encode_bit(e.negative);
    const std::uint64_t u = e.value + 1;
    const int width = std::bit_width(u);
    for (int b = 0; b < width - 1; ++b) enc.encode_bit(false);
    for (int b = width - 1; b >= 0; --b) enc.encode_bit((u >> b) & 1u);
  }
  return enc.finish();
}

std::vector<long> range_decode(std::span<const std::uint8_t> bytes,
                               const std::vector<CdfTable>& tables,
                               std::span<const std::size_t> table_refs) {
  std::vector<long> out;
  if (table_refs.empty()) {
    if (!bytes.empty()) throw DecodeError("bytes given for an empty stream");
    return out;
  }
  for (const CdfTable& t : tables) check_table(t);
  RangeDecoder dec(bytes);
  out.reserve(table_refs.size());
  for (std::size_t ref : table_refs) {
    if (ref >= tables.size()) throw DecodeError("table ref out of range");
    const CdfTable& t = tables[ref];
    const std::size_t s = dec.decode(t.cdf, kPrecisionBits);
    if (s < t.regular_symbols()) {
      out.push_back(t.min_symbol + static_cast<long>(s));
      continue;
    }
    const bool negative = dec.decode_bit();
    int zeros = 0;
    while (!dec.decode_bit()) {
      if (++zeros > 48) throw DecodeError("escape code too long");
    }
    std::uint64_t u = 1;
    for (int b = 0; b < zeros; ++b) u = (u << 1) | (dec.decode_bit() ? 1u : 0u);
    const long radius = static_cast<long>(t.regular_symbols() / 2);
    const long center = t.min_symbol + radius;
    const long mag = static_cast<long>(u - 1) + radius + 1;
    out.push_back(negative ? center - mag : center + mag);
  }
  dec.finish();
  return out;
}

CodeCost table_cost(const SymbolStream& stream, const std::vector<CdfTable>& tables) {
  CodeCost cost;
  const double total = static_cast<double>(1u << kPrecisionBits);
  for (std::size_t i = 0; i < stream.symbols.size(); ++i) {
    const CdfTable& t = tables.at(stream.table_refs.at(i));
    const long index = stream.symbols[i] - t.min_symbol;
    if (index >= 0 && static_cast<std::size_t>(index) < t.regular_symbols()) {
      cost.bits -= std::log2(t.frequency(static_cast<std::size_t>(index)) / total);
      continue;
    }
    if (!t.has_escape) throw CoderError("symbol outside table support");
    const std::size_t esc = t.regular_symbols();
    cost.bits -= std::log2(t.frequency(esc) / total);
    cost.bits += 1 + exp_golomb_length(escape_of(stream.symbols[i], t).value);
    ++cost.escapes;
  }
  return cost;
}

}  // namespace edic
