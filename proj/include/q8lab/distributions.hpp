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

#ifndef Q8LAB_DISTRIBUTIONS_HPP_
#define Q8LAB_DISTRIBUTIONS_HPP_

#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "q8lab/error.hpp"
#include "q8lab/random.hpp"
#include "q8lab/tensor.hpp"

namespace q8lab {

enum class DistFamily { kNormal, kLogNormal, kStudentT };

struct DistSpec {
  DistFamily family = DistFamily::kNormal;
  double location = 0.0;
  double scale = 1.0;
  /// Degrees of freedom, StudentT only.
  double nu = 3.0;
  /// StudentT: multiply by sqrt((nu - 2) / nu) so the variance is scale^2.
  bool standardize = false;
  std::uint64_t seed = 0;
};

inline void validate(const DistSpec& d) {
  if (!(d.scale > 0.0) || !std::isfinite(d.scale) || !std::isfinite(d.location)) {
    fail(ErrorCode::kInvalidArgument, "distribution scale must be positive and finite");
  }
  if (d.family == DistFamily::kStudentT) {
    if (!(d.nu > 0.0) || !std::isfinite(d.nu)) fail(ErrorCode::kInvalidArgument, "t distribution needs nu > 0");
    if (d.standardize && !(d.nu > 2.0)) {
      fail(ErrorCode::kInvalidArgument, "standardized t distribution needs nu > 2");
    }
  }
}

inline std::string family_name(DistFamily f) {
  switch (f) {
    case DistFamily::kNormal: return "normal";
    case DistFamily::kLogNormal: return "lognormal";
    case DistFamily::kStudentT: return "t";
  }
  return "?";
}

/// Parses "t:nu=3", "normal:mu=0,sigma=1", "lognormal:mu=0,sigma=1".
/// The t family also accepts "std=1" to request standardization.
inline DistSpec parse_dist(std::string_view text) {
  DistSpec d;
  const auto colon = text.find(':');
  const std::string_view family = text.substr(0, colon);
  if (family == "normal" || family == "gaussian") {
    d.family = DistFamily::kNormal;
  } else if (family == "lognormal") {
    d.family = DistFamily::kLogNormal;
  } else if (family == "t" || family == "studentt" || family == "student-t") {
    d.family = DistFamily::kStudentT;
  } else {
    fail(ErrorCode::kParse, "unknown distribution family '" + std::string(family) + "'");
  }
  std::string_view rest = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) fail(ErrorCode::kParse, "expected key=value in '" + std::string(item) + "'");
    const std::string_view key = item.substr(0, eq);
    const std::string value(item.substr(eq + 1));
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
      fail(ErrorCode::kParse, "bad number '" + value + "' for " + std::string(key));
    }
    if (key == "mu" || key == "loc") {
      d.location = v;
    } else if (key == "sigma" || key == "scale") {
      d.scale = v;
    } else if (key == "nu" && d.family == DistFamily::kStudentT) {
      d.nu = v;
    } else if (key == "std" && d.family == DistFamily::kStudentT) {
      d.standardize = v != 0.0;
    } else {
      fail(ErrorCode::kParse, "unknown parameter '" + std::string(key) + "' for " + family_name(d.family));
    }
  }
  validate(d);
  return d;
}

namespace detail {

inline double standard_normal(RandomStream& s) {
  const double u1 = s.next_open_unit();
  const double u2 = s.next_unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Marsaglia-Tsang, with the u^(1/a) boost for a < 1.
inline double standard_gamma(double shape, RandomStream& s) {
  if (shape < 1.0) {
    const double g = standard_gamma(shape + 1.0, s);
    return g * std::pow(s.next_open_unit(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = standard_normal(s);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = s.next_open_unit();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace detail

/// One draw from the distribution using the given element stream.
inline double sample_one(const DistSpec& d, RandomStream& s) {
  switch (d.family) {
    case DistFamily::kNormal:
      return d.location + d.scale * detail::standard_normal(s);
    case DistFamily::kLogNormal:
      return std::exp(d.location + d.scale * detail::standard_normal(s));
    case DistFamily::kStudentT: {
      const double z = detail::standard_normal(s);
      const double chi2 = 2.0 * detail::standard_gamma(0.5 * d.nu, s);
      double t = z / std::sqrt(chi2 / d.nu);
      if (d.standardize) t *= std::sqrt((d.nu - 2.0) / d.nu);
      return d.location + d.scale * t;
    }
  }
  return 0.0;
}

/// Element i is drawn from RandomStream(seed).substream(i), so the tensor is
/// a pure function of (spec, shape).
inline Tensor sample(const DistSpec& d, Shape shape) {
  validate(d);
  const RandomStream root(d.seed);
  std::vector<double> data(shape_size(shape));
  for (std::size_t i = 0; i < data.size(); ++i) {
    RandomStream s = root.substream(i);
    data[i] = sample_one(d, s);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace q8lab

#endif  // Q8LAB_DISTRIBUTIONS_HPP_
