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

// Dynamic symmetric quantization. Every scale group gets a step size
// delta = absmax(group) / max_finite(format), recomputed on every call, and
// elements are encoded as x / delta.

#ifndef Q8LAB_QUANTIZER_HPP_
#define Q8LAB_QUANTIZER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "q8lab/error.hpp"
#include "q8lab/formats.hpp"
#include "q8lab/random.hpp"
#include "q8lab/tensor.hpp"

namespace q8lab {

enum class Granularity { kTensor, kChannel, kFineGrained };

inline std::string_view granularity_name(Granularity g) {
  switch (g) {
    case Granularity::kTensor: return "tensor";
    case Granularity::kChannel: return "channel";
    case Granularity::kFineGrained: return "fine-grained";
  }
  return "?";
}

inline Granularity parse_granularity(std::string_view s) {
  if (s == "tensor") return Granularity::kTensor;
  if (s == "channel" || s == "per-vector" || s == "vector") return Granularity::kChannel;
  if (s == "fine-grained" || s == "fine" || s == "finegrained") return Granularity::kFineGrained;
  fail(ErrorCode::kInvalidArgument, "unknown granularity '" + std::string(s) + "'");
}

inline std::string_view rounding_name(Rounding r) {
  return r == Rounding::kRtne ? "rtne" : "stochastic";
}

inline Rounding parse_rounding(std::string_view s) {
  if (s == "rtne" || s == "nearest") return Rounding::kRtne;
  if (s == "stochastic" || s == "sr") return Rounding::kStochastic;
  fail(ErrorCode::kInvalidArgument, "unknown rounding '" + std::string(s) + "'");
}

struct QuantConfig {
  FormatSpec spec = FormatSpec::int8();
  Rounding rounding = Rounding::kRtne;
  Granularity granularity = Granularity::kTensor;
  /// Round inputs to bfloat16 before quantizing.
  bool bf16_input = false;

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

/// "format[:granularity[:rounding]]", e.g. "int8:channel:stochastic".
inline QuantConfig parse_quant_config(std::string_view text) {
  QuantConfig cfg;
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ':') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  if (parts.size() > 4) fail(ErrorCode::kParse, "bad quant config '" + std::string(text) + "'");
  cfg.spec = parse_format(parts[0]);
  if (parts.size() > 1) cfg.granularity = parse_granularity(parts[1]);
  if (parts.size() > 2) cfg.rounding = parse_rounding(parts[2]);
  if (parts.size() > 3) {
    if (parts[3] != "bf16") fail(ErrorCode::kParse, "unknown quant config flag '" + parts[3] + "'");
    cfg.bf16_input = true;
  }
  return cfg;
}

inline std::string to_string(const QuantConfig& cfg) {
  std::string s = cfg.spec.name() + ":" + std::string(granularity_name(cfg.granularity)) + ":" +
                  std::string(rounding_name(cfg.rounding));
  if (cfg.bf16_input) s += ":bf16";
  return s;
}

/// Step sizes for each scale group plus the element-to-group partition.
struct ScaleSet {
  std::vector<double> scales;
  std::vector<std::uint32_t> group_map;
  Granularity granularity = Granularity::kTensor;
  std::vector<std::string> warnings;

  double scale_of(std::size_t element) const { return scales[group_map[element]]; }
  std::size_t group_count() const noexcept { return scales.size(); }
};

struct QuantizedTensor {
  std::vector<Code8> codes;
  FormatSpec spec = FormatSpec::int8();
  ScaleSet scales;
  Shape shape;
  std::vector<AxisRole> roles;
};

/// Roles used for grouping. Untagged tensors treat the last axis as
/// contracting and the rest as channels; for rank >= 3 axis 0 is taken to be
/// the example axis.
inline std::vector<AxisRole> effective_roles(const Tensor& x, std::vector<std::string>* warnings = nullptr) {
  if (x.tagged()) {
    std::vector<AxisRole> roles = x.roles();
    for (auto& r : roles) {
      if (r == AxisRole::kUnspecified) r = AxisRole::kOther;
    }
    return roles;
  }
  std::vector<AxisRole> roles(x.rank(), AxisRole::kChannel);
  if (!roles.empty()) roles.back() = AxisRole::kContracting;
  if (x.rank() >= 3) {
    roles.front() = AxisRole::kExample;
    if (warnings) warnings->push_back("untagged tensor: axis 0 assumed to be the example axis");
  }
  return roles;
}

/// Whether an axis is split into separate scale groups under a policy.
inline bool splits_axis(AxisRole role, Granularity g) {
  switch (g) {
    case Granularity::kTensor:
      return false;
    case Granularity::kChannel:
      return role == AxisRole::kChannel || role == AxisRole::kOther;
    case Granularity::kFineGrained:
      return role == AxisRole::kChannel || role == AxisRole::kOther || role == AxisRole::kBatch;
  }
  return false;
}

/// Partition of element indices into scale groups. Groups are numbered in
/// row-major order of the split axes. Returns the number of groups.
inline std::size_t build_group_map(const Shape& shape, const std::vector<AxisRole>& roles, Granularity g,
                                   std::vector<std::uint32_t>& group_map) {
  const std::size_t rank = shape.size();
  std::vector<std::size_t> group_stride(rank, 0);
  std::size_t groups = 1;
  for (std::size_t a = rank; a-- > 0;) {
    if (splits_axis(roles[a], g)) {
      group_stride[a] = groups;
      groups *= shape[a];
    }
  }
  const std::size_t n = shape_size(shape);
  group_map.assign(n, 0);
  if (groups == 1 || n == 0) return groups;
  std::vector<std::size_t> index(rank, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t gid = 0;
    for (std::size_t a = 0; a < rank; ++a) gid += index[a] * group_stride[a];
    group_map[i] = static_cast<std::uint32_t>(gid);
    for (std::size_t a = rank; a-- > 0;) {
      if (++index[a] < shape[a]) break;
      index[a] = 0;
    }
  }
  return groups;
}

inline ScaleSet compute_scales(const Tensor& x, const FormatSpec& spec, Granularity g) {
  require_finite(x, "tensor");
  ScaleSet set;
  set.granularity = g;
  const auto roles = effective_roles(x, g == Granularity::kFineGrained ? &set.warnings : nullptr);
  const std::size_t groups = build_group_map(x.shape(), roles, g, set.group_map);
  std::vector<double> absmax(groups, 0.0);
  const auto data = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    double& m = absmax[set.group_map[i]];
    m = std::max(m, std::fabs(data[i]));
  }
  const double top = max_finite(spec);
  set.scales.resize(groups);
  for (std::size_t k = 0; k < groups; ++k) set.scales[k] = absmax[k] > 0.0 ? absmax[k] / top : 1.0;
  return set;
}

namespace detail {

inline Tensor maybe_bf16(const Tensor& x, bool enabled) {
  if (!enabled) return x;
  Tensor out = x;
  for (double& v : out.data()) v = round_to_bfloat16(v);
  return out;
}

}  // namespace detail

/// Element i draws its stochastic rounding decision from rng.substream(i).
inline QuantizedTensor quantize(const Tensor& input, const QuantConfig& cfg, const RandomStream& rng) {
  const Tensor x = detail::maybe_bf16(input, cfg.bf16_input);
  QuantizedTensor q;
  q.spec = cfg.spec;
  q.shape = x.shape();
  q.roles = x.roles();
  q.scales = compute_scales(x, cfg.spec, cfg.granularity);
  q.codes.resize(x.size());
  const auto data = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double scaled = data[i] / q.scales.scale_of(i);
    if (cfg.rounding == Rounding::kRtne) {
      q.codes[i] = encode(cfg.spec, scaled);
    } else {
      RandomStream element = rng.substream(i);
      q.codes[i] = encode(cfg.spec, scaled, Rounding::kStochastic, element);
    }
  }
  return q;
}

inline Tensor dequantize(const QuantizedTensor& q) {
  std::vector<double> out(q.codes.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = decode(q.spec, q.codes[i]);
    if (std::isnan(v)) fail(ErrorCode::kDomain, "reserved code in quantized tensor");
    out[i] = v * q.scales.scale_of(i);
  }
  return Tensor(q.shape, std::move(out), q.roles);
}

inline Tensor fake_quantize(const Tensor& x, const QuantConfig& cfg, const RandomStream& rng) {
  return dequantize(quantize(x, cfg, rng));
}

}  // namespace q8lab

#endif  // Q8LAB_QUANTIZER_HPP_
