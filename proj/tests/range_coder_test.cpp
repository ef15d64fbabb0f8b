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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "edic/entropy.hpp"
#include "edic/error.hpp"
#include "edic/range_coder.hpp"

namespace edic {
namespace {

CdfTable uniform_table(std::size_t n, long min_symbol = 0, bool escape = false) {
  CdfTable t;
  t.min_symbol = min_symbol;
  t.has_escape = escape;
  const std::size_t total = 1u << kPrecisionBits;
  for (std::size_t i = 0; i <= n; ++i) t.cdf.push_back(static_cast<std::uint32_t>(i * total / n));
  return t;
}

// Draws an index from the table's own distribution.
long sample(const CdfTable& t, std::mt19937_64& rng) {
  const std::uint32_t u = static_cast<std::uint32_t>(rng() % (1u << kPrecisionBits));
  const auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), u);
  return t.min_symbol + static_cast<long>(it - t.cdf.begin()) - 1;
}

std::vector<long> round_trip(const SymbolStream& s, const std::vector<CdfTable>& tables,
                             std::vector<std::uint8_t>* bytes_out = nullptr) {
  auto bytes = range_encode(s, tables);
  auto back = range_decode(bytes, tables, s.table_refs);
  if (bytes_out) *bytes_out = std::move(bytes);
  return back;
}

TEST(RangeCoder, ZeroEntropyStreamIsTiny) {
  CdfTable one;
  one.cdf = {0, 1u << kPrecisionBits};
  one.min_symbol = 7;
  SymbolStream s{std::vector<long>(1000, 7), std::vector<std::size_t>(1000, 0)};
  std::vector<std::uint8_t> bytes;
  EXPECT_EQ(round_trip(s, {one}, &bytes), s.symbols);
  EXPECT_LE(bytes.size(), 4u);
  EXPECT_EQ(table_cost(s, {one}).bits, 0.0);
}

TEST(RangeCoder, UniformByteAlphabetCostsEightBits) {
  std::mt19937_64 rng(1);
  const CdfTable t = uniform_table(256);
  SymbolStream s;
  for (int i = 0; i < 1000; ++i) {
    s.symbols.push_back(static_cast<long>(rng() % 256));
    s.table_refs.push_back(0);
  }
  std::vector<std::uint8_t> bytes;
  EXPECT_EQ(round_trip(s, {t}, &bytes), s.symbols);
  EXPECT_GE(bytes.size(), 996u);
  EXPECT_LE(bytes.size(), 1004u);
}

TEST(RangeCoder, GmmStreamMeetsEntropyAccounting) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> mean(-30, 30), logs(std::log(0.11), std::log(40.0)),
      u(0.05, 1.0);
  std::vector<GmmParams> params;
  for (int i = 0; i < 500; ++i) {
    GmmParams p;
    double total = 0.0;
    for (int f = 0; f < 2; ++f) {
      p.weights.push_back(u(rng));
      total += p.weights.back();
      p.means.push_back(mean(rng));
      p.scales.push_back(std::exp(logs(rng)));
    }
    for (double& w : p.weights) w /= total;
    params.push_back(p);
  }
  const auto tables = gmm_cdf_tables(params, 1);
  SymbolStream s;
  for (int i = 0; i < 100000; ++i) {
    const std::size_t ref = rng() % tables.size();
    long v = sample(tables[ref], rng);
    // Escape index: substitute a genuine out-of-window value.
    if (v == tables[ref].min_symbol + 129) v = tables[ref].min_symbol - 1 - static_cast<long>(rng() % 100);
    s.symbols.push_back(v);
    s.table_refs.push_back(ref);
  }
  std::vector<std::uint8_t> bytes;
  EXPECT_EQ(round_trip(s, tables, &bytes), s.symbols);
  const CodeCost cost = table_cost(s, tables);
  const double coded = 8.0 * static_cast<double>(bytes.size());
  EXPECT_LE(coded, cost.bits * 1.001 + 32);
  EXPECT_LE(coded, cost.bits + 32 + 8.0 * static_cast<double>(cost.escapes) + 1e-3 * cost.bits);
  EXPECT_GE(coded, cost.bits - 1.0);
}

TEST(RangeCoder, OverheadBoundHoldsForShortStreams) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<CdfTable> tables;
    for (int k = 0; k < 4; ++k) {
      std::vector<double> p(1 + rng() % 40);
      for (double& v : p) v = std::pow(std::uniform_real_distribution<double>(0, 1)(rng), 4);
      p[0] += 1e-3;
      CdfTable t;
      t.cdf = build_cdf_table(p);
      t.min_symbol = static_cast<long>(rng() % 11) - 5;
      tables.push_back(t);
    }
    SymbolStream s;
    const std::size_t n = rng() % 200;
    for (std::size_t i = 0; i < n; ++i) {
      s.table_refs.push_back(rng() % tables.size());
      s.symbols.push_back(sample(tables[s.table_refs.back()], rng));
    }
    std::vector<std::uint8_t> bytes;
    ASSERT_EQ(round_trip(s, tables, &bytes), s.symbols);
    EXPECT_LE(8.0 * static_cast<double>(bytes.size()), table_cost(s, tables).bits + 32) << trial;
  }
}

TEST(RangeCoder, EmptyStream) {
  const std::vector<CdfTable> tables{uniform_table(4)};
  EXPECT_TRUE(range_encode(SymbolStream{}, tables).empty());
  EXPECT_TRUE(range_decode({}, tables, {}).empty());
  const std::vector<std::uint8_t> junk{1};
  EXPECT_THROW(range_decode(junk, tables, {}), DecodeError);
}

TEST(RangeCoder, ExtremeProbabilitiesRoundTrip) {
  // Minimum-frequency symbols next to a dominant one stress carry handling.
  std::vector<double> p(300, 0.0);
  p[150] = 1.0;
  CdfTable t;
  t.cdf = build_cdf_table(p);
  std::mt19937_64 rng(4);
  SymbolStream s;
  for (int i = 0; i < 20000; ++i) {
    s.symbols.push_back(rng() % 3 == 0 ? static_cast<long>(rng() % 300) : 150);
    s.table_refs.push_back(0);
  }
  EXPECT_EQ(round_trip(s, {t}), s.symbols);
}

TEST(RangeCoder, FuzzedRoundTrips) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<CdfTable> tables;
    const std::size_t count = 1 + rng() % 5;
    for (std::size_t k = 0; k < count; ++k) {
      CdfTable t;
      t.has_escape = rng() % 2;
      std::vector<double> p(1 + 2 * (rng() % 20) + (t.has_escape ? 1 : 0));
      for (double& v : p) v = std::exp(-static_cast<double>(rng() % 30));
      t.cdf = build_cdf_table(p);
      t.min_symbol = static_cast<long>(rng() % 2001) - 1000;
      tables.push_back(t);
    }
    SymbolStream s;
    const std::size_t n = rng() % 500;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ref = rng() % count;
      long v = sample(tables[ref], rng);
      if (tables[ref].has_escape && v == tables[ref].min_symbol + static_cast<long>(tables[ref].regular_symbols())) {
        const long far = 1 + static_cast<long>(rng() % 1000000);
        v = rng() % 2 ? tables[ref].min_symbol - far
                      : tables[ref].min_symbol + static_cast<long>(tables[ref].regular_symbols()) - 1 + far;
      }
      s.symbols.push_back(v);
      s.table_refs.push_back(ref);
    }
    ASSERT_EQ(round_trip(s, tables), s.symbols) << trial;
  }
}

TEST(RangeCoder, EscapeCarriesFarOutliers) {
  const CdfTable t = uniform_table(130, -64, true);
  SymbolStream s;
  for (long v : {0L, 64L, -64L, 65L, -65L, 66L, 1000L, -123456789L, 1L << 39, -(1L << 40)}) {
    s.symbols.push_back(v);
    s.table_refs.push_back(0);
  }
  std::vector<std::uint8_t> bytes;
  EXPECT_EQ(round_trip(s, {t}, &bytes), s.symbols);
  const CodeCost cost = table_cost(s, {t});
  EXPECT_EQ(cost.escapes, 7u);
  EXPECT_LE(8.0 * static_cast<double>(bytes.size()), cost.bits + 32);
}

TEST(RangeCoder, EscapeCostIsSignPlusExpGolomb) {
  const CdfTable t = uniform_table(130, -64, true);
  const double esc = -std::log2(t.frequency(129) / 65536.0);
  const auto cost_of = [&](long v) { return table_cost(SymbolStream{{v}, {0}}, {t}).bits; };
  EXPECT_DOUBLE_EQ(cost_of(65), esc + 1 + 1);      // distance 0
  EXPECT_DOUBLE_EQ(cost_of(-66), esc + 1 + 3);     // distance 1
  EXPECT_DOUBLE_EQ(cost_of(65 + 6), esc + 1 + 5);  // distance 6
  EXPECT_DOUBLE_EQ(cost_of(65 + 7), esc + 1 + 7);  // distance 7
}

TEST(RangeCoder, OutOfSupportWithoutEscapeIsCoderError) {
  const std::vector<CdfTable> tables{uniform_table(8, 0)};
  EXPECT_THROW(range_encode(SymbolStream{{8}, {0}}, tables), CoderError);
  EXPECT_THROW(range_encode(SymbolStream{{-1}, {0}}, tables), CoderError);
  EXPECT_THROW(range_encode(SymbolStream{{1}, {1}}, tables), CoderError);
  EXPECT_THROW(range_encode(SymbolStream{{1, 2}, {0}}, tables), CoderError);
  EXPECT_THROW(range_encode(SymbolStream{{1}, {0}}, {uniform_table(9, 0, true)}), CoderError);
  CdfTable bad = uniform_table(8);
  bad.cdf.back() = 1000;
  EXPECT_THROW(range_encode(SymbolStream{{1}, {0}}, {bad}), CoderError);
}

TEST(RangeCoder, TruncatedInputIsDecodeError) {
  std::mt19937_64 rng(6);
  const std::vector<CdfTable> tables{uniform_table(256), uniform_table(132, -65, true)};
  SymbolStream s;
  for (int i = 0; i < 2000; ++i) {
    s.table_refs.push_back(i % 2);
    s.symbols.push_back(i % 2 ? static_cast<long>(rng() % 400) - 200 : static_cast<long>(rng() % 256));
  }
  const auto bytes = range_encode(s, tables);
  for (std::size_t cut : {std::size_t{1}, std::size_t{2}, std::size_t{5}, bytes.size() / 2, bytes.size() - 3}) {
    const std::span<const std::uint8_t> part(bytes.data(), bytes.size() - cut);
    EXPECT_THROW(range_decode(part, tables, s.table_refs), DecodeError) << cut;
  }
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(range_decode(longer, tables, s.table_refs), DecodeError);
}

TEST(RangeCoder, DeterministicOutput) {
  std::mt19937_64 rng(7);
  const std::vector<CdfTable> tables{uniform_table(17, -8)};
  SymbolStream s;
  for (int i = 0; i < 5000; ++i) {
    s.symbols.push_back(static_cast<long>(rng() % 17) - 8);
    s.table_refs.push_back(0);
  }
  EXPECT_EQ(range_encode(s, tables), range_encode(s, tables));
}

TEST(RangeCoder, LowLevelBitsRoundTrip) {
  std::mt19937_64 rng(8);
  std::vector<bool> bits(10000);
  RangeEncoder enc;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    bits[i] = rng() & 1;
    enc.encode_bit(bits[i]);
  }
  const auto bytes = enc.finish();
  EXPECT_LE(bytes.size(), 10000u / 8 + 4);
  RangeDecoder dec(bytes);
  for (std::size_t i = 0; i < bits.size(); ++i) ASSERT_EQ(dec.decode_bit(), bits[i]) << i;
  EXPECT_NO_THROW(dec.finish());
  EXPECT_THROW(RangeDecoder(std::span<const std::uint8_t>()), DecodeError);
}

TEST(RangeCoder, EveryProperPrefixAndExtensionIsRejected) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> p(1 + rng() % 12);
    for (double& v : p) v = std::exp(-static_cast<double>(rng() % 12));
    CdfTable t;
    t.cdf = build_cdf_table(p);
    const std::vector<CdfTable> tables{t};
    SymbolStream s;
    const std::size_t n = 1 + rng() % 60;
    for (std::size_t i = 0; i < n; ++i) {
      s.symbols.push_back(sample(t, rng));
      s.table_refs.push_back(0);
    }
    const auto bytes = range_encode(s, tables);
    ASSERT_EQ(range_decode(bytes, tables, s.table_refs), s.symbols);
    for (std::size_t len = 1; len < bytes.size(); ++len) {
      EXPECT_THROW(range_decode(std::span<const std::uint8_t>(bytes.data(), len), tables, s.table_refs),
                   DecodeError)
          << trial << " " << len;
    }
    for (std::uint8_t extra : {0, 1, 255}) {
      auto longer = bytes;
      longer.push_back(extra);
      EXPECT_THROW(range_decode(longer, tables, s.table_refs), DecodeError) << trial;
    }
  }
}

TEST(RangeCoder, FlushCostsLessThanTwoBytes) {
  std::mt19937_64 rng(10);
  const CdfTable t = uniform_table(5);
  double worst = -1e9;
  for (int trial = 0; trial < 2000; ++trial) {
    SymbolStream s;
    const std::size_t n = 1 + rng() % 300;
    for (std::size_t i = 0; i < n; ++i) {
      s.symbols.push_back(static_cast<long>(rng() % 5));
      s.table_refs.push_back(0);
    }
    const double excess = 8.0 * static_cast<double>(range_encode(s, {t}).size()) - table_cost(s, {t}).bits;
    worst = std::max(worst, excess);
  }
  EXPECT_LE(worst, 16.0);
}

}  // namespace
}  // namespace edic
