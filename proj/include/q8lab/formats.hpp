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

// Bit-exact codecs for the 8-bit formats: symmetric INT8 and EeMm
// minifloats (1 sign bit, e exponent bits, m mantissa bits, biased
// exponent, subnormals). All arithmetic is carried out in binary64, which
// represents every 8-bit value and every scaling step exactly.

#ifndef Q8LAB_FORMATS_HPP_
#define Q8LAB_FORMATS_HPP_

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "q8lab/error.hpp"
#include "q8lab/random.hpp"

namespace q8lab {

enum class FormatKind { kInt8, kMinifloat };

/// Which minifloat codes are withheld from the finite range.
enum class NonFiniteEncoding {
  /// Exponent field all ones is reserved (E5M2 and the IEEE-like customs).
  kIeeeLike,
  /// Only exponent and mantissa both all ones is reserved; no infinities (E4M3).
  kNanOnly,
};

enum class Rounding { kRtne, kStochastic };

struct Code8 {
  std::uint8_t raw = 0;
  friend constexpr bool operator==(Code8, Code8) = default;
};

class FormatSpec {
 public:
  static FormatSpec int8() { return FormatSpec(FormatKind::kInt8, 0, 0, 0, NonFiniteEncoding::kIeeeLike, "int8"); }
  static FormatSpec e4m3() { return FormatSpec(FormatKind::kMinifloat, 4, 3, 7, NonFiniteEncoding::kNanOnly, "e4m3"); }
  static FormatSpec e5m2() { return FormatSpec(FormatKind::kMinifloat, 5, 2, 15, NonFiniteEncoding::kIeeeLike, "e5m2"); }

  /// Generic EeMm layout. The bias defaults to 2^(e-1)-1.
  static FormatSpec minifloat(int exp_bits, int mantissa_bits,
                              std::optional<int> bias = std::nullopt,
                              NonFiniteEncoding nonfinite = NonFiniteEncoding::kIeeeLike) {
    if (1 + exp_bits + mantissa_bits != 8 || exp_bits < 2 || mantissa_bits < 1) {
      fail(ErrorCode::kInvalidArgument,
           "minifloat needs 1 + e + m = 8 with e >= 2 and m >= 1, got e=" +
               std::to_string(exp_bits) + " m=" + std::to_string(mantissa_bits));
    }
    const int default_bias = (1 << (exp_bits - 1)) - 1;
    const int b = bias.value_or(default_bias);
    std::string name = "e" + std::to_string(exp_bits) + "m" + std::to_string(mantissa_bits);
    if (b != default_bias) name += "b" + std::to_string(b);
    return FormatSpec(FormatKind::kMinifloat, exp_bits, mantissa_bits, b, nonfinite, std::move(name));
  }

  FormatKind kind() const noexcept { return kind_; }
  bool is_int8() const noexcept { return kind_ == FormatKind::kInt8; }
  int exp_bits() const noexcept { return exp_bits_; }
  int mantissa_bits() const noexcept { return mantissa_bits_; }
  int bias() const noexcept { return bias_; }
  NonFiniteEncoding nonfinite() const noexcept { return nonfinite_; }
  const std::string& name() const noexcept { return name_; }

  friend bool operator==(const FormatSpec&, const FormatSpec&) = default;

 private:
  FormatSpec(FormatKind kind, int e, int m, int bias, NonFiniteEncoding nf, std::string name)
      : kind_(kind), exp_bits_(e), mantissa_bits_(m), bias_(bias), nonfinite_(nf), name_(std::move(name)) {}

  FormatKind kind_;
  int exp_bits_;
  int mantissa_bits_;
  int bias_;
  NonFiniteEncoding nonfinite_;
  std::string name_;
};

/// Resolves "int8", "e4m3", "e5m2" and generic "eXmY[bZ]" (case-insensitive).
/// Any e4m3 layout keeps the NaN-only reservation; other layouts are IEEE-like.
inline FormatSpec parse_format(std::string_view text) {
  std::string s;
  for (char c : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "int8") return FormatSpec::int8();
  if (s == "e4m3") return FormatSpec::e4m3();
  if (s == "e5m2") return FormatSpec::e5m2();

  auto bad = [&]() -> FormatSpec { fail(ErrorCode::kUnknownFormat, "unknown format '" + std::string(text) + "'"); };
  std::size_t pos = 0;
  auto read_int = [&](bool allow_sign) -> std::optional<int> {
    std::size_t start = pos;
    if (allow_sign && pos < s.size() && s[pos] == '-') ++pos;
    std::size_t digits = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos == digits || pos - digits > 3) return std::nullopt;
    return std::stoi(s.substr(start, pos - start));
  };
  if (s.empty() || s[pos++] != 'e') return bad();
  auto e = read_int(false);
  if (!e || pos >= s.size() || s[pos++] != 'm') return bad();
  auto m = read_int(false);
  if (!m) return bad();
  std::optional<int> bias;
  if (pos < s.size()) {
    if (s[pos++] != 'b') return bad();
    bias = read_int(true);
    if (!bias || pos != s.size()) return bad();
  }
  if (1 + *e + *m != 8 || *e < 2 || *m < 1) return bad();
  const auto nf = (*e == 4 && *m == 3) ? NonFiniteEncoding::kNanOnly : NonFiniteEncoding::kIeeeLike;
  FormatSpec spec = FormatSpec::minifloat(*e, *m, bias, nf);
  if (spec == FormatSpec::e4m3()) return FormatSpec::e4m3();
  return spec;
}

inline double max_finite(const FormatSpec& spec) {
  if (spec.is_int8()) return 127.0;
  const int m = spec.mantissa_bits();
  const int all_ones = (1 << spec.exp_bits()) - 1;
  if (spec.nonfinite() == NonFiniteEncoding::kNanOnly) {
    return std::ldexp((1 << (m + 1)) - 2, all_ones - spec.bias() - m);
  }
  return std::ldexp((1 << (m + 1)) - 1, all_ones - 1 - spec.bias() - m);
}

inline double min_normal(const FormatSpec& spec) {
  if (spec.is_int8()) fail(ErrorCode::kDomain, "int8 has no normal/subnormal split");
  return std::ldexp(1.0, 1 - spec.bias());
}

/// Smallest positive value, 2^(1 - bias - m).
inline double min_subnormal(const FormatSpec& spec) {
  if (spec.is_int8()) fail(ErrorCode::kDomain, "int8 has no subnormals");
  return std::ldexp(1.0, 1 - spec.bias() - spec.mantissa_bits());
}

/// True for codes that carry no finite value. Int8 reserves -128 so that
/// the range stays symmetric.
inline bool is_reserved(const FormatSpec& spec, Code8 code) {
  if (spec.is_int8()) return code.raw == 0x80;
  const int m = spec.mantissa_bits();
  const unsigned exp_mask = (1u << spec.exp_bits()) - 1;
  const unsigned man_mask = (1u << m) - 1;
  const unsigned exp_field = (code.raw >> m) & exp_mask;
  const unsigned man_field = code.raw & man_mask;
  if (spec.nonfinite() == NonFiniteEncoding::kNanOnly) {
    return exp_field == exp_mask && man_field == man_mask;
  }
  return exp_field == exp_mask;
}

/// Exact value of a code; quiet NaN for reserved codes.
inline double decode(const FormatSpec& spec, Code8 code) {
  if (is_reserved(spec, code)) return std::numeric_limits<double>::quiet_NaN();
  if (spec.is_int8()) return static_cast<double>(static_cast<std::int8_t>(code.raw));
  const int m = spec.mantissa_bits();
  const unsigned exp_field = (code.raw >> m) & ((1u << spec.exp_bits()) - 1);
  const unsigned man_field = code.raw & ((1u << m) - 1);
  const double magnitude =
      exp_field == 0 ? std::ldexp(static_cast<double>(man_field), 1 - spec.bias() - m)
                     : std::ldexp(static_cast<double>(man_field + (1u << m)),
                                  static_cast<int>(exp_field) - spec.bias() - m);
  return (code.raw & 0x80) ? -magnitude : magnitude;
}

namespace detail {

// Rounds a nonnegative multiple count onto the integers. Stochastic mode
// consumes exactly one draw.
inline double round_count(double scaled, Rounding mode, RandomStream* rng) {
  const double lower = std::floor(scaled);
  const double frac = scaled - lower;
  bool up;
  if (mode == Rounding::kRtne) {
    up = frac > 0.5 || (frac == 0.5 && std::fmod(lower, 2.0) != 0.0);
  } else {
    if (rng == nullptr) fail(ErrorCode::kInvalidArgument, "stochastic rounding needs a random stream");
    up = rng->next_unit() < frac;
  }
  return up ? lower + 1.0 : lower;
}

// Exponent of the grid spacing around magnitude a.
inline int quantum_exponent(const FormatSpec& spec, double a) {
  if (spec.is_int8()) return 0;
  const int min_exp = 1 - spec.bias();
  int exp2 = 0;
  if (a > 0.0) {
    std::frexp(a, &exp2);
    exp2 -= 1;
  }
  return std::max(exp2, min_exp) - spec.mantissa_bits();
}

inline Code8 magnitude_to_code(const FormatSpec& spec, double magnitude, bool negative) {
  if (magnitude == 0.0) return Code8{0};
  if (spec.is_int8()) {
    const int v = static_cast<int>(negative ? -magnitude : magnitude);
    return Code8{static_cast<std::uint8_t>(static_cast<std::int8_t>(v))};
  }
  const int m = spec.mantissa_bits();
  int exp2 = 0;
  std::frexp(magnitude, &exp2);
  exp2 -= 1;
  unsigned exp_field;
  unsigned man_field;
  if (exp2 < 1 - spec.bias()) {
    exp_field = 0;
    man_field = static_cast<unsigned>(std::ldexp(magnitude, spec.bias() - 1 + m));
  } else {
    exp_field = static_cast<unsigned>(exp2 + spec.bias());
    man_field = static_cast<unsigned>(std::ldexp(magnitude, m - exp2)) - (1u << m);
  }
  return Code8{static_cast<std::uint8_t>((negative ? 0x80u : 0u) | (exp_field << m) | man_field)};
}

inline Code8 encode_impl(const FormatSpec& spec, double v, Rounding mode, RandomStream* rng) {
  if (!std::isfinite(v)) fail(ErrorCode::kDomain, "cannot encode a non-finite value");
  const bool negative = std::signbit(v);
  const double a = std::fabs(v);
  const double top = max_finite(spec);
  double magnitude;
  if (a >= top) {
    // Saturation is a deterministic clamp; the stream still advances once.
    if (mode == Rounding::kStochastic && rng != nullptr) rng->next_unit();
    magnitude = top;
  } else {
    const int q = quantum_exponent(spec, a);
    magnitude = std::ldexp(round_count(std::ldexp(a, -q), mode, rng), q);
  }
  return magnitude_to_code(spec, magnitude, negative);
}

}  // namespace detail

/// Round-to-nearest-even encode with saturation at max_finite.
inline Code8 encode(const FormatSpec& spec, double v) {
  return detail::encode_impl(spec, v, Rounding::kRtne, nullptr);
}

/// Encode with the given rounding. Stochastic rounding takes exactly one
/// draw from `rng` per call; RTNE never touches it.
inline Code8 encode(const FormatSpec& spec, double v, Rounding mode, RandomStream& rng) {
  return detail::encode_impl(spec, v, mode, &rng);
}

/// decode(encode(v)) without materializing the code.
inline double round_trip(const FormatSpec& spec, double v, Rounding mode, RandomStream& rng) {
  return decode(spec, encode(spec, v, mode, rng));
}

struct CodePoint {
  Code8 code;
  double value = 0.0;
  bool reserved = false;
  /// Set on the negative zero, which duplicates +0.
  bool duplicate = false;
};

/// All 256 codes: finite values ascending, then reserved codes in code order.
inline std::vector<CodePoint> enumerate_codes(const FormatSpec& spec) {
  std::vector<CodePoint> finite;
  std::vector<CodePoint> reserved;
  for (unsigned raw = 0; raw < 256; ++raw) {
    const Code8 code{static_cast<std::uint8_t>(raw)};
    CodePoint point{code, decode(spec, code), is_reserved(spec, code), false};
    if (point.reserved) {
      reserved.push_back(point);
    } else {
      point.duplicate = point.value == 0.0 && std::signbit(point.value);
      finite.push_back(point);
    }
  }
  std::stable_sort(finite.begin(), finite.end(), [](const CodePoint& a, const CodePoint& b) {
    if (a.value != b.value) return a.value < b.value;
    return !a.duplicate && b.duplicate;
  });
  finite.insert(finite.end(), reserved.begin(), reserved.end());
  return finite;
}

/// Rounds to the nearest bfloat16 (ties to even). Magnitudes beyond the
/// bfloat16 range saturate at its largest finite value.
inline double round_to_bfloat16(double v) {
  if (v == 0.0 || !std::isfinite(v)) return v;
  constexpr double kBf16Max = 0x1.FEp127;
  const double a = std::fabs(v);
  int exp2 = 0;
  std::frexp(a, &exp2);
  const int q = std::max(exp2 - 1, -126) - 7;
  double r = std::ldexp(detail::round_count(std::ldexp(a, -q), Rounding::kRtne, nullptr), q);
  r = std::min(r, kBf16Max);
  return std::signbit(v) ? -r : r;
}

}  // namespace q8lab

#endif  // Q8LAB_FORMATS_HPP_
