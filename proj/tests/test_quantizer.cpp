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
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "oracle.hpp"
#include "q8lab/distributions.hpp"
#include "q8lab/quantizer.hpp"

namespace q8lab {
namespace {

using R = AxisRole;

Tensor normal(Shape shape, std::uint64_t seed, double scale = 1.0) {
  DistSpec d;
  d.scale = scale;
  d.seed = seed;
  return sample(d, std::move(shape));
}

TEST(Quantizer, TensorScaleExamples) {
  const Tensor x({3}, {-254.0, 127.0, 254.0});
  EXPECT_EQ(compute_scales(x, FormatSpec::int8(), Granularity::kTensor).scales, std::vector<double>{2.0});
  const Tensor y({2}, {448.0, -3.0});
  EXPECT_EQ(compute_scales(y, FormatSpec::e4m3(), Granularity::kTensor).scales, std::vector<double>{1.0});
}

TEST(Quantizer, Int8TieExample) {
  const Tensor x({3}, {-254.0, 127.0, 254.0});
  const QuantizedTensor q = quantize(x, QuantConfig{}, RandomStream(0));
  ASSERT_EQ(q.codes.size(), 3u);
  EXPECT_EQ(static_cast<std::int8_t>(q.codes[0].raw), -127);
  EXPECT_EQ(static_cast<std::int8_t>(q.codes[1].raw), 64);  // 63.5 ties to even
  EXPECT_EQ(static_cast<std::int8_t>(q.codes[2].raw), 127);
  EXPECT_EQ(dequantize(q), Tensor({3}, {-254.0, 128.0, 254.0}));
}

TEST(Quantizer, ZeroTensor) {
  const Tensor z = Tensor::zeros({4, 5});
  for (auto g : {Granularity::kTensor, Granularity::kChannel, Granularity::kFineGrained}) {
    const QuantizedTensor q = quantize(z, {FormatSpec::e4m3(), Rounding::kRtne, g}, RandomStream(0));
    for (double s : q.scales.scales) EXPECT_EQ(s, 1.0);
    for (Code8 c : q.codes) EXPECT_EQ(c.raw, 0);
    EXPECT_EQ(dequantize(q), z);
  }
}

TEST(Quantizer, ChannelScalesMatchColumnAbsmax) {
  const Tensor x = normal({4, 8}, 42).with_roles({R::kContracting, R::kChannel});
  for (const FormatSpec& spec : {FormatSpec::int8(), FormatSpec::e4m3(), FormatSpec::e5m2()}) {
    const ScaleSet s = compute_scales(x, spec, Granularity::kChannel);
    ASSERT_EQ(s.group_count(), 8u);
    for (std::size_t j = 0; j < 8; ++j) {
      double absmax = 0.0;
      for (std::size_t i = 0; i < 4; ++i) absmax = std::max(absmax, std::fabs(x[i * 8 + j]));
      for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s.scale_of(i * 8 + j), absmax / max_finite(spec));
    }
  }
}

TEST(Quantizer, ScaleAlignsAbsmaxToMaxFinite) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = normal({6, 10}, seed, std::exp(static_cast<double>(seed) - 10.0));
    for (const FormatSpec& spec : {FormatSpec::int8(), FormatSpec::e4m3(), FormatSpec::e5m2()}) {
      for (auto g : {Granularity::kTensor, Granularity::kChannel}) {
        const ScaleSet s = compute_scales(x, spec, g);
        std::vector<double> absmax(s.group_count(), 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) absmax[s.group_map[i]] = std::max(absmax[s.group_map[i]], std::fabs(x[i]));
        for (std::size_t k = 0; k < absmax.size(); ++k) {
          const double top = max_finite(spec);
          const double ulp = std::nextafter(top, INFINITY) - top;
          EXPECT_LE(std::fabs(absmax[k] / s.scales[k] - top), ulp);
        }
      }
    }
  }
}

TEST(Quantizer, GroupMapIsTotalPartition) {
  const std::vector<std::pair<Shape, std::vector<R>>> cases = {
      {{7}, {R::kContracting}},
      {{3, 5}, {R::kChannel, R::kContracting}},
      {{3, 5}, {R::kContracting, R::kChannel}},
      {{2, 3, 4}, {R::kBatch, R::kChannel, R::kContracting}},
      {{2, 3, 4}, {R::kExample, R::kOther, R::kContracting}},
      {{2, 2, 3, 4}, {R::kExample, R::kBatch, R::kChannel, R::kContracting}},
      {{2, 3, 2, 2}, {R::kChannel, R::kContracting, R::kOther, R::kBatch}},
  };
  for (const auto& [shape, roles] : cases) {
    for (auto g : {Granularity::kTensor, Granularity::kChannel, Granularity::kFineGrained}) {
      std::vector<std::uint32_t> map;
      const std::size_t groups = build_group_map(shape, roles, g, map);
      ASSERT_EQ(map.size(), shape_size(shape));
      std::vector<int> used(groups, 0);
      for (auto m : map) {
        ASSERT_LT(m, groups);
        ++used[m];
      }
      std::size_t expected = 1;
      for (std::size_t a = 0; a < shape.size(); ++a) {
        if (splits_axis(roles[a], g)) expected *= shape[a];
      }
      EXPECT_EQ(groups, expected);
      for (int u : used) EXPECT_GT(u, 0);
    }
  }
}

TEST(Quantizer, GroupMembershipFollowsSplitAxes) {
  // Brute force: two elements share a group iff they agree on every split axis.
  const Shape shape{2, 3, 4};
  const std::vector<R> roles{R::kBatch, R::kChannel, R::kContracting};
  for (auto g : {Granularity::kTensor, Granularity::kChannel, Granularity::kFineGrained}) {
    std::vector<std::uint32_t> map;
    build_group_map(shape, roles, g, map);
    for (std::size_t i = 0; i < 24; ++i) {
      for (std::size_t j = 0; j < 24; ++j) {
        const std::size_t ii[3] = {i / 12, (i / 4) % 3, i % 4};
        const std::size_t jj[3] = {j / 12, (j / 4) % 3, j % 4};
        bool same = true;
        for (int a = 0; a < 3; ++a) {
          if (splits_axis(roles[a], g) && ii[a] != jj[a]) same = false;
        }
        EXPECT_EQ(map[i] == map[j], same);
      }
    }
  }
}

TEST(Quantizer, UntaggedRolesAndWarning) {
  const Tensor two = normal({3, 4}, 1);
  EXPECT_EQ(effective_roles(two), (std::vector<R>{R::kChannel, R::kContracting}));
  const ScaleSet s2 = compute_scales(two, FormatSpec::int8(), Granularity::kFineGrained);
  EXPECT_TRUE(s2.warnings.empty());
  const Tensor three = normal({2, 3, 4}, 1);
  EXPECT_EQ(effective_roles(three), (std::vector<R>{R::kExample, R::kChannel, R::kContracting}));
  const ScaleSet s3 = compute_scales(three, FormatSpec::int8(), Granularity::kFineGrained);
  EXPECT_EQ(s3.warnings.size(), 1u);
  EXPECT_EQ(s3.group_count(), 3u);  // the example axis is never split
}

TEST(Quantizer, Int8RtneErrorWithinHalfStep) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Tensor x = normal({4, 6, 8}, seed).with_roles({R::kBatch, R::kChannel, R::kContracting});
    for (auto g : {Granularity::kTensor, Granularity::kChannel, Granularity::kFineGrained}) {
      const QuantizedTensor q = quantize(x, {FormatSpec::int8(), Rounding::kRtne, g}, RandomStream(0));
      const Tensor y = dequantize(q);
      for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::fabs(x[i] - y[i]), q.scales.scale_of(i) / 2);
    }
  }
}

TEST(Quantizer, FinerGranularityNeverIncreasesStepSize) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = normal({4, 6, 8}, seed).with_roles({R::kBatch, R::kChannel, R::kContracting});
    for (const FormatSpec& spec : {FormatSpec::int8(), FormatSpec::e4m3(), FormatSpec::e5m2()}) {
      const ScaleSet t = compute_scales(x, spec, Granularity::kTensor);
      const ScaleSet c = compute_scales(x, spec, Granularity::kChannel);
      const ScaleSet f = compute_scales(x, spec, Granularity::kFineGrained);
      for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_LE(c.scale_of(i), t.scale_of(i));
        EXPECT_LE(f.scale_of(i), c.scale_of(i));
      }
    }
  }
}

TEST(Quantizer, Int8ErrorBoundTightensWithGranularity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    DistSpec d;
    d.family = DistFamily::kStudentT;
    d.nu = 3;
    d.seed = seed;
    const Tensor x = sample(d, {4, 16, 64}).with_roles({R::kBatch, R::kChannel, R::kContracting});
    double previous_bound = INFINITY;
    for (auto g : {Granularity::kTensor, Granularity::kChannel, Granularity::kFineGrained}) {
      const QuantizedTensor q = quantize(x, {FormatSpec::int8(), Rounding::kRtne, g}, RandomStream(0));
      const Tensor back = dequantize(q);
      double bound = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        ASSERT_LE(std::fabs(x[i] - back[i]), q.scales.scale_of(i) / 2) << "seed " << seed;
        bound += q.scales.scale_of(i) / 2;
      }
      EXPECT_LE(bound, previous_bound);
      previous_bound = bound;
    }
  }
}

TEST(Quantizer, MatchesScalarOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor x = normal({5, 7}, seed, 3.0);
    for (const auto& [spec, layout] : {std::pair{FormatSpec::int8(), oracle::int8()},
                                       std::pair{FormatSpec::e4m3(), oracle::e4m3()},
                                       std::pair{FormatSpec::e5m2(), oracle::e5m2()}}) {
      const auto grid = oracle::positive_grid(layout);
      const double top = oracle::max_finite(layout);
      for (auto rounding : {Rounding::kRtne, Rounding::kStochastic}) {
        const RandomStream rng(seed + 100);
        const Tensor y = fake_quantize(x, {spec, rounding, Granularity::kChannel}, rng);
        for (std::size_t i = 0; i < 5; ++i) {
          double absmax = 0.0;
          for (std::size_t j = 0; j < 7; ++j) absmax = std::max(absmax, std::fabs(x[i * 7 + j]));
          const double delta = absmax / top;
          for (std::size_t j = 0; j < 7; ++j) {
            RandomStream s = rng.substream(i * 7 + j);
            const double q = oracle::round_value(grid, x[i * 7 + j] / delta,
                                                 rounding == Rounding::kStochastic ? &s : nullptr);
            ASSERT_EQ(y[i * 7 + j], q * delta);
          }
        }
      }
    }
  }
}

TEST(Quantizer, Determinism) {
  const Tensor x = normal({16, 16}, 9);
  const QuantConfig rtne{FormatSpec::e4m3(), Rounding::kRtne, Granularity::kChannel};
  const QuantConfig sr{FormatSpec::e4m3(), Rounding::kStochastic, Granularity::kChannel};
  auto codes = [](const QuantizedTensor& q) {
    std::vector<int> v;
    for (auto c : q.codes) v.push_back(c.raw);
    return v;
  };
  EXPECT_EQ(codes(quantize(x, rtne, RandomStream(1))), codes(quantize(x, rtne, RandomStream(2))));
  EXPECT_EQ(codes(quantize(x, sr, RandomStream(1))), codes(quantize(x, sr, RandomStream(1))));
  EXPECT_NE(codes(quantize(x, sr, RandomStream(1))), codes(quantize(x, sr, RandomStream(2))));
}

TEST(Quantizer, OnGridRoundTripIsExact) {
  std::vector<double> v;
  for (const auto& c : enumerate_codes(FormatSpec::e5m2())) {
    if (!c.reserved) v.push_back(c.value * 0.5);
  }
  const Tensor x({v.size()}, v);
  for (auto r : {Rounding::kRtne, Rounding::kStochastic}) {
    EXPECT_EQ(fake_quantize(x, {FormatSpec::e5m2(), r, Granularity::kTensor}, RandomStream(4)), x);
  }
}

TEST(Quantizer, DequantizeRejectsReservedCode) {
  QuantizedTensor q = quantize(Tensor({2}, {1.0, 2.0}), QuantConfig{}, RandomStream(0));
  q.codes[0] = Code8{0x80};
  try {
    dequantize(q);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDomain);
  }
}

TEST(Quantizer, RejectsNonFiniteInput) {
  EXPECT_THROW(quantize(Tensor({2}, {1.0, NAN}), QuantConfig{}, RandomStream(0)), Error);
}

TEST(Quantizer, Bf16InputFlag) {
  const Tensor x({2}, {1.0 + 0x1p-9, 127.0});
  QuantConfig cfg{FormatSpec::int8(), Rounding::kRtne, Granularity::kTensor, true};
  const Tensor y = fake_quantize(x, cfg, RandomStream(0));
  EXPECT_EQ(y[0], 1.0);
}

TEST(Quantizer, ParseQuantConfig) {
  const QuantConfig c = parse_quant_config("int8:fine-grained:stochastic");
  EXPECT_EQ(c.spec, FormatSpec::int8());
  EXPECT_EQ(c.granularity, Granularity::kFineGrained);
  EXPECT_EQ(c.rounding, Rounding::kStochastic);
  EXPECT_EQ(parse_quant_config("e5m2").granularity, Granularity::kTensor);
  EXPECT_EQ(parse_quant_config("e4m3:per-vector").granularity, Granularity::kChannel);
  EXPECT_TRUE(parse_quant_config("e4m3:tensor:rtne:bf16").bf16_input);
  EXPECT_EQ(parse_quant_config(to_string(c)), c);
  EXPECT_THROW(parse_quant_config("int8:row"), Error);
  EXPECT_THROW(parse_quant_config("int8:tensor:up"), Error);
}

TEST(TensorFile, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "q8lab_tensor_roundtrip.q8t";
  const Tensor tagged = Tensor({2, 3}, {1.0, -2.5, 0.0, 3.25, 1e-3f, 7.0}).with_roles({R::kChannel, R::kContracting});
  save_tensor(path.string(), tagged);
  EXPECT_EQ(load_tensor(path.string()), tagged);
  const Tensor plain({4}, {1.0, 2.0, 3.0, 4.0});
  save_tensor(path.string(), plain);
  const Tensor back = load_tensor(path.string());
  EXPECT_EQ(back, plain);
  EXPECT_FALSE(back.tagged());
  std::filesystem::remove(path);
}

TEST(TensorFile, LayoutIsLittleEndianFloat32) {
  std::stringstream ss;
  write_tensor(ss, Tensor({1}, {1.0}).with_roles({R::kChannel}));
  const std::string bytes = ss.str();
  const std::string expected("Q8T1\x01\x00\x00\x00\x01\x00\x00\x00\x04\x00\x00\x80\x3f", 17);
  EXPECT_EQ(bytes, expected);
}

TEST(TensorFile, RejectsGarbage) {
  std::stringstream ss("Q8T2\x01\x00\x00\x00");
  EXPECT_THROW(read_tensor(ss), Error);
  std::stringstream truncated(std::string("Q8T1\x01\x00\x00\x00\x04\x00\x00\x00\x00", 13));
  EXPECT_THROW(read_tensor(truncated), Error);
  EXPECT_THROW(load_tensor("/nonexistent/q8lab.q8t"), Error);
}

}  // namespace
}  // namespace q8lab
