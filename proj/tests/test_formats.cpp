// Copyright 2026 The q8lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "oracle.hpp"
#include "q8lab/formats.hpp"

namespace q8lab {
namespace {

struct Pair {
  FormatSpec spec;
  oracle::Layout layout;
};

std::vector<Pair> all_formats() {
  return {{FormatSpec::int8(), oracle::int8()},
          {FormatSpec::e4m3(), oracle::e4m3()},
          {FormatSpec::e5m2(), oracle::e5m2()},
          {FormatSpec::minifloat(3, 4), oracle::minifloat(3, 4)},
          {FormatSpec::minifloat(2, 5), oracle::minifloat(2, 5)},
          {FormatSpec::minifloat(6, 1), oracle::minifloat(6, 1)},
          {FormatSpec::minifloat(3, 4, 3), oracle::minifloat(3, 4, 3)}};
}

std::vector<Pair> minifloats() {
  auto v = all_formats();
  v.erase(v.begin());
  return v;
}

TEST(Formats, MaxFiniteMatchesStatedValues) {
  EXPECT_EQ(max_finite(FormatSpec::e4m3()), 448.0);
  EXPECT_EQ(max_finite(FormatSpec::e5m2()), 57344.0);
  EXPECT_EQ(max_finite(FormatSpec::int8()), 127.0);
}

TEST(Formats, MaxFiniteIsLastFiniteEnumeratedValue) {
  for (const auto& [spec, layout] : all_formats()) {
    const auto codes = enumerate_codes(spec);
    double top = -INFINITY;
    for (const auto& c : codes) {
      if (!c.reserved) top = std::max(top, c.value);
    }
    EXPECT_EQ(top, max_finite(spec)) << spec.name();
    EXPECT_EQ(top, oracle::max_finite(layout)) << spec.name();
  }
}

TEST(Formats, MinSubnormalMatchesEnumerationOracle) {
  // Frozen from oracle::min_positive.
  EXPECT_EQ(oracle::min_positive(oracle::e4m3()), 0x1p-9);
  EXPECT_EQ(oracle::min_positive(oracle::e5m2()), 0x1p-16);
  EXPECT_EQ(oracle::min_positive(oracle::minifloat(3, 4, 3)), 0x1p-6);
  EXPECT_EQ(min_subnormal(FormatSpec::e4m3()), 0x1p-9);
  EXPECT_EQ(min_subnormal(FormatSpec::e5m2()), 0x1p-16);
  EXPECT_EQ(min_subnormal(FormatSpec::minifloat(3, 4, 3)), 0x1p-6);
  for (const auto& [spec, layout] : minifloats()) {
    EXPECT_EQ(min_subnormal(spec), oracle::min_positive(layout)) << spec.name();
    EXPECT_EQ(min_subnormal(spec), std::ldexp(1.0, 1 - spec.bias() - spec.mantissa_bits())) << spec.name();
  }
}

TEST(Formats, Int8HasNoSubnormals) {
  try {
    min_subnormal(FormatSpec::int8());
    FAIL() << "expected a domain error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDomain);
  }
  EXPECT_THROW(min_normal(FormatSpec::int8()), Error);
}

TEST(Formats, DecodeExamples) {
  EXPECT_EQ(decode(FormatSpec::e4m3(), Code8{0x00}), 0.0);
  EXPECT_EQ(decode(FormatSpec::int8(), Code8{0x81}), -127.0);
  EXPECT_EQ(decode(FormatSpec::e5m2(), Code8{0x7B}), 57344.0);
  EXPECT_EQ(decode(FormatSpec::e4m3(), Code8{0x7E}), 448.0);
  EXPECT_TRUE(std::isnan(decode(FormatSpec::e4m3(), Code8{0x7F})));
  EXPECT_TRUE(std::isnan(decode(FormatSpec::e4m3(), Code8{0xFF})));
  EXPECT_TRUE(std::isnan(decode(FormatSpec::int8(), Code8{0x80})));
}

TEST(Formats, DecodeMatchesBitFieldOracleForEveryCode) {
  for (const auto& [spec, layout] : all_formats()) {
    for (const auto& ref : oracle::table(layout)) {
      const Code8 c{ref.code};
      EXPECT_EQ(is_reserved(spec, c), ref.reserved) << spec.name() << " code " << int(ref.code);
      const double v = decode(spec, c);
      if (ref.reserved) {
        EXPECT_TRUE(std::isnan(v));
      } else {
        EXPECT_EQ(v, ref.value) << spec.name() << " code " << int(ref.code);
        EXPECT_EQ(std::signbit(v), std::signbit(ref.value));
      }
    }
  }
}

TEST(Formats, ReservedCodeCounts) {
  auto reserved = [](const FormatSpec& s) {
    int n = 0;
    for (const auto& c : enumerate_codes(s)) n += c.reserved;
    return n;
  };
  EXPECT_EQ(reserved(FormatSpec::int8()), 1);
  EXPECT_EQ(reserved(FormatSpec::e4m3()), 2);
  EXPECT_EQ(reserved(FormatSpec::e5m2()), 8);
}

TEST(Formats, EnumerationIsSortedAndFlagsDuplicates) {
  for (const auto& [spec, layout] : all_formats()) {
    const auto codes = enumerate_codes(spec);
    ASSERT_EQ(codes.size(), 256u);
    double prev = -INFINITY;
    bool seen_reserved = false;
    for (const auto& c : codes) {
      if (c.reserved) {
        seen_reserved = true;
        continue;
      }
      ASSERT_FALSE(seen_reserved) << "reserved codes must come last";
      if (c.duplicate) {
        EXPECT_EQ(c.value, 0.0);
        EXPECT_TRUE(std::signbit(c.value));
        continue;
      }
      EXPECT_GT(c.value, prev) << spec.name();
      prev = c.value;
    }
  }
}

TEST(Formats, Int8EnumerationCoversSymmetricRange) {
  const auto codes = enumerate_codes(FormatSpec::int8());
  std::vector<double> finite;
  for (const auto& c : codes) {
    if (!c.reserved) finite.push_back(c.value);
  }
  ASSERT_EQ(finite.size(), 255u);
  for (int i = 0; i < 255; ++i) EXPECT_EQ(finite[i], i - 127);
  EXPECT_EQ(codes.back().code.raw, 0x80);
  EXPECT_TRUE(codes.back().reserved);
}

TEST(Formats, EncodeRtneMatchesNearestNeighbourOracle) {
  RandomStream rng(11);
  for (const auto& [spec, layout] : all_formats()) {
    const auto grid = oracle::positive_grid(layout);
    const double top = grid.back().value;
    const double bottom = spec.is_int8() ? 0.25 : min_subnormal(spec) / 8;
    for (int i = 0; i < 20000; ++i) {
      const double t = rng.next_unit();
      const double mag = std::exp(std::log(bottom) + t * (std::log(4 * top) - std::log(bottom)));
      const double v = (rng.next_u64() & 1) ? -mag : mag;
      ASSERT_EQ(decode(spec, encode(spec, v)), oracle::round_value(grid, v)) << spec.name() << " v=" << v;
    }
  }
}

TEST(Formats, RtneTiesGoToEvenMantissa) {
  for (const auto& [spec, layout] : all_formats()) {
    const auto grid = oracle::positive_grid(layout);
    for (std::size_t i = 1; i < grid.size(); ++i) {
      const double mid = 0.5 * (grid[i - 1].value + grid[i].value);
      const auto& even = (grid[i - 1].code & 1u) == 0 ? grid[i - 1] : grid[i];
      EXPECT_EQ(encode(spec, mid).raw, even.code) << spec.name() << " mid=" << mid;
      EXPECT_EQ(decode(spec, encode(spec, -mid)), -even.value) << spec.name();
    }
  }
}

TEST(Formats, E4m3SaturatesAtMax) {
  EXPECT_EQ(encode(FormatSpec::e4m3(), 1000.0).raw, 0x7E);
  EXPECT_EQ(encode(FormatSpec::e4m3(), -1000.0).raw, 0xFE);
}

TEST(Formats, SaturationProperty) {
  RandomStream rng(3);
  for (const auto& [spec, layout] : all_formats()) {
    const double top = max_finite(spec);
    for (int i = 0; i < 1000; ++i) {
      const double v = top * (1.0 + 1e-12 + 1e6 * rng.next_unit());
      EXPECT_EQ(decode(spec, encode(spec, v)), top);
      EXPECT_EQ(decode(spec, encode(spec, -v)), -top);
      RandomStream s = rng.substream(i);
      EXPECT_EQ(decode(spec, encode(spec, v, Rounding::kStochastic, s)), top);
    }
  }
}

TEST(Formats, FlushBelowHalfMinSubnormal) {
  RandomStream rng(5);
  for (const auto& [spec, layout] : minifloats()) {
    const double half = min_subnormal(spec) / 2;
    for (int i = 0; i < 1000; ++i) {
      const double v = half * (1.0 - rng.next_open_unit() * 0.999999);
      EXPECT_EQ(encode(spec, v).raw, 0x00);
      EXPECT_EQ(encode(spec, -v).raw, 0x00);
    }
    EXPECT_EQ(encode(spec, half).raw, 0x00);  // tie to the even code
  }
  EXPECT_EQ(encode(FormatSpec::int8(), 0.0).raw, 0x00);
  EXPECT_EQ(encode(FormatSpec::int8(), -0.4).raw, 0x00);
}

TEST(Formats, StochasticFlushIsProbabilistic) {
  const FormatSpec spec = FormatSpec::e4m3();
  const double v = 0.25 * min_subnormal(spec);
  int up = 0;
  for (int i = 0; i < 40000; ++i) {
    RandomStream s = RandomStream(8).substream(i);
    up += decode(spec, encode(spec, v, Rounding::kStochastic, s)) != 0.0;
  }
  EXPECT_NEAR(up / 40000.0, 0.25, 4 * std::sqrt(0.25 * 0.75 / 40000));
}

TEST(Formats, MonotoneUnderRtne) {
  RandomStream rng(17);
  for (const auto& [spec, layout] : all_formats()) {
    const double top = max_finite(spec);
    std::vector<double> vs;
    for (int i = 0; i < 5000; ++i) vs.push_back((2 * rng.next_unit() - 1) * 1.5 * top);
    for (const auto& e : oracle::positive_grid(layout)) {
      vs.push_back(e.value);
      vs.push_back(-e.value);
      vs.push_back(std::nextafter(e.value, INFINITY));
      vs.push_back(std::nextafter(e.value, -INFINITY));
    }
    std::sort(vs.begin(), vs.end());
    double prev = -INFINITY;
    for (double v : vs) {
      const double q = decode(spec, encode(spec, v));
      ASSERT_GE(q, prev) << spec.name() << " at " << v;
      prev = q;
    }
  }
}

TEST(Formats, RepresentableValuesAreFixedPoints) {
  for (const auto& [spec, layout] : all_formats()) {
    for (const auto& c : enumerate_codes(spec)) {
      if (c.reserved) continue;
      RandomStream s(c.code.raw);
      EXPECT_EQ(decode(spec, encode(spec, c.value)), c.value);
      EXPECT_EQ(decode(spec, encode(spec, c.value, Rounding::kStochastic, s)), c.value);
      // Codec idempotence.
      EXPECT_EQ(decode(spec, encode(spec, decode(spec, c.code))), decode(spec, c.code));
    }
  }
}

TEST(Formats, StochasticRoundingTakesOneDraw) {
  const FormatSpec spec = FormatSpec::e5m2();
  for (double v : {0.3, 1e9, -1e9, 0.0, 1e-30}) {
    RandomStream s(1);
    encode(spec, v, Rounding::kStochastic, s);
    EXPECT_EQ(s.counter(), 1u) << v;
    RandomStream r(1);
    encode(spec, v, Rounding::kRtne, r);
    EXPECT_EQ(r.counter(), 0u) << v;
  }
}

TEST(Formats, StochasticRoundingMatchesOracleDrawForDraw) {
  RandomStream rng(23);
  for (const auto& [spec, layout] : all_formats()) {
    const auto grid = oracle::positive_grid(layout);
    const double top = grid.back().value;
    for (int i = 0; i < 5000; ++i) {
      const double v = (2 * rng.next_unit() - 1) * 1.2 * top;
      RandomStream a = rng.substream(i), b = rng.substream(i);
      ASSERT_EQ(decode(spec, encode(spec, v, Rounding::kStochastic, a)), oracle::round_value(grid, v, &b));
    }
  }
}

TEST(Formats, StochasticRoundingIsUnbiased) {
  const int n = 20000;
  RandomStream rng(29);
  for (const auto& [spec, layout] : all_formats()) {
    const auto grid = oracle::positive_grid(layout);
    for (int k = 0; k < 10; ++k) {
      const double v = rng.next_unit() * grid.back().value;
      std::size_t hi = 1;
      while (grid[hi].value <= v) ++hi;
      const double gap = grid[hi].value - grid[hi - 1].value;
      double sum = 0.0;
      const RandomStream base = rng.substream(1000 + k);
      for (int i = 0; i < n; ++i) {
        RandomStream s = base.substream(i);
        sum += decode(spec, encode(spec, v, Rounding::kStochastic, s));
      }
      EXPECT_NEAR(sum / n, v, 4 * (gap / 2) / std::sqrt(double(n))) << spec.name();
    }
  }
}

TEST(Formats, RtneRelativeErrorBoundOnNormals) {
  RandomStream rng(31);
  for (const auto& [spec, layout] : minifloats()) {
    const double lo = min_normal(spec), hi = max_finite(spec);
    const double bound = std::ldexp(1.0, -(spec.mantissa_bits() + 1));
    for (int i = 0; i < 20000; ++i) {
      const double v = std::exp(std::log(lo) + rng.next_unit() * (std::log(hi) - std::log(lo)));
      const double q = decode(spec, encode(spec, v));
      EXPECT_LE(std::fabs(v - q) / v, bound) << spec.name() << " v=" << v;
    }
  }
}

TEST(Formats, NonFiniteInputIsDomainError) {
  for (double v : {NAN, INFINITY, -INFINITY}) {
    try {
      encode(FormatSpec::e4m3(), v);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kDomain);
    }
  }
}

TEST(Formats, ParseNames) {
  EXPECT_EQ(parse_format("int8"), FormatSpec::int8());
  EXPECT_EQ(parse_format("E4M3"), FormatSpec::e4m3());
  EXPECT_EQ(parse_format("e5m2"), FormatSpec::e5m2());
  const FormatSpec custom = parse_format("e3m4b3");
  EXPECT_EQ(custom.exp_bits(), 3);
  EXPECT_EQ(custom.mantissa_bits(), 4);
  EXPECT_EQ(custom.bias(), 3);
  EXPECT_EQ(custom.name(), "e3m4");
  EXPECT_EQ(parse_format("e3m4b2").name(), "e3m4b2");
  EXPECT_EQ(parse_format("e3m4").bias(), 3);
  EXPECT_EQ(parse_format("e2m5").bias(), 1);
  EXPECT_EQ(parse_format("e4m3b6").nonfinite(), NonFiniteEncoding::kNanOnly);
  EXPECT_EQ(parse_format("e4m3b6").bias(), 6);
  for (const char* bad : {"", "int4", "e4m4", "e1m6", "e7m0", "e3m4b", "x", "e3m4bq"}) {
    EXPECT_THROW(parse_format(bad), Error) << bad;
  }
  try {
    parse_format("fp8");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownFormat);
  }
  EXPECT_THROW(FormatSpec::minifloat(4, 4), Error);
  EXPECT_THROW(FormatSpec::minifloat(1, 6), Error);
}

TEST(Formats, Bfloat16Rounding) {
  EXPECT_EQ(round_to_bfloat16(1.0 + 0x1p-8), 1.0);
  EXPECT_EQ(round_to_bfloat16(1.0 + 3 * 0x1p-8), 1.0 + 0x1p-6);
  EXPECT_EQ(round_to_bfloat16(1.0 + 0x1p-7), 1.0 + 0x1p-7);
  EXPECT_EQ(round_to_bfloat16(-3.0), -3.0);
  EXPECT_EQ(round_to_bfloat16(0.0), 0.0);
}

}  // namespace
}  // namespace q8lab
