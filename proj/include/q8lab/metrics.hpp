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

// Error and distribution metrics: relative error, inner-product backward
// error, sample moments, relative-error profiles and the format
// recommendation rule table.

#ifndef Q8LAB_METRICS_HPP_
#define Q8LAB_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "q8lab/error.hpp"
#include "q8lab/formats.hpp"
#include "q8lab/qmatmul.hpp"
#include "q8lab/quantizer.hpp"
#include "q8lab/random.hpp"
#include "q8lab/tensor.hpp"

namespace q8lab {

/// |v - approx| / |v|.
inline double relative_error(double v, double approx) {
  if (v == 0.0) fail(ErrorCode::kDomain, "relative error undefined at v = 0");
  return std::fabs(v - approx) / std::fabs(v);
}

struct TrialMeta {
  std::uint64_t seed = 0;
  std::string dist;
  double nu = std::numeric_limits<double>::quiet_NaN();
  std::string format;
  std::string granularity;
  std::string rounding;
};

struct ErrorReport {
  double max = 0.0;
  double median = 0.0;
  double mean = 0.0;
  double p99 = 0.0;
  std::size_t count = 0;
  std::size_t masked_count = 0;
  TrialMeta meta;
};

/// Linear-interpolated quantile of sorted data, q in [0, 1].
inline double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) fail(ErrorCode::kDomain, "quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return w == 0.0 ? sorted[lo] : sorted[lo] + w * (sorted[hi] - sorted[lo]);
}

/// Summary of nonnegative error samples; NaN entries count as masked.
inline ErrorReport summarize(std::span<const double> errors) {
  std::vector<double> kept;
  kept.reserve(errors.size());
  ErrorReport r;
  for (double e : errors) {
    if (std::isnan(e)) {
      ++r.masked_count;
    } else {
      kept.push_back(e);
    }
  }
  if (kept.empty()) fail(ErrorCode::kDomain, "no unmasked error entries to summarize");
  std::sort(kept.begin(), kept.end());
  double sum = 0.0;
  for (double e : kept) sum += e;
  r.count = kept.size();
  r.max = kept.back();
  r.mean = sum / static_cast<double>(kept.size());
  r.median = sorted_quantile(kept, 0.5);
  r.p99 = sorted_quantile(kept, 0.99);
  return r;
}

struct BackwardError {
  /// Elementwise backward error; masked entries hold NaN.
  Tensor matrix;
  ErrorReport report;
};

/// |L.R - Q| / (|L|.|R|) elementwise, given the exact reference product.
/// Entries with a zero denominator are masked.
inline BackwardError backward_error(const ReferenceProduct& exact, const Tensor& quantized) {
  if (exact.product.shape() != quantized.shape()) {
    fail(ErrorCode::kShapeMismatch, "backward error: result shape " + shape_string(quantized.shape()) +
                                        " vs exact " + shape_string(exact.product.shape()));
  }
  std::vector<double> be(quantized.size());
  for (std::size_t i = 0; i < be.size(); ++i) {
    const double denom = exact.abs_product[i];
    be[i] = denom == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                         : std::fabs(exact.product[i] - quantized[i]) / denom;
  }
  BackwardError out{Tensor(quantized.shape(), be), {}};
  out.report = summarize(be);
  return out;
}

inline BackwardError backward_error(const Tensor& lhs, const Tensor& rhs, const Tensor& quantized) {
  return backward_error(reference_matmul(lhs, rhs), quantized);
}

struct Moments {
  std::size_t count = 0;
  double mean = 0.0;
  /// Unbiased sample variance.
  double variance = 0.0;
  /// Bias-corrected sample skewness; empty when undefined.
  std::optional<double> skew;
  /// Bias-corrected excess kurtosis (normal -> 0); empty when undefined.
  std::optional<double> excess_kurtosis;
};

/// Single-pass central moment accumulation (Terriberry's update).
inline Moments moments(std::span<const double> x) {
  if (x.size() < 2) fail(ErrorCode::kDomain, "moments need at least 2 elements");
  double mean = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;
  double n = 0.0;
  for (double v : x) {
    const double n1 = n;
    n += 1.0;
    const double delta = v - mean;
    const double delta_n = delta / n;
    const double delta_n2 = delta_n * delta_n;
    const double term1 = delta * delta_n * n1;
    mean += delta_n;
    m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * m2 - 4.0 * delta_n * m3;
    m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * m2;
    m2 += term1;
  }
  Moments r;
  r.count = x.size();
  r.mean = mean;
  r.variance = m2 / (n - 1.0);
  if (m2 > 0.0) {
    const double g1 = std::sqrt(n) * m3 / std::pow(m2, 1.5);
    const double g2 = n * m4 / (m2 * m2) - 3.0;
    if (n >= 3.0) r.skew = std::sqrt(n * (n - 1.0)) / (n - 2.0) * g1;
    if (n >= 4.0) r.excess_kurtosis = (n - 1.0) / ((n - 2.0) * (n - 3.0)) * ((n + 1.0) * g2 + 6.0);
  }
  return r;
}

inline Moments moments(const Tensor& x) { return moments(x.data()); }

/// Raw samples of x - fake_quantize(x).
inline std::vector<double> quant_error_samples(const Tensor& x, const QuantConfig& cfg, const RandomStream& rng) {
  const Tensor fq = fake_quantize(x, cfg, rng);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - fq[i];
  return out;
}

struct ProfileGrid {
  double min = 1e-4;
  double max = 1.0;
  std::size_t points = 256;
  bool log_spaced = true;
};

struct ProfilePoint {
  double value = 0.0;
  double quantized = 0.0;
  double relative_error = 0.0;
};

inline std::vector<double> grid_values(const ProfileGrid& grid) {
  if (!(grid.min > 0.0) || !(grid.max >= grid.min) || grid.points == 0 || !std::isfinite(grid.max)) {
    fail(ErrorCode::kInvalidArgument, "profile grid needs 0 < min <= max and at least one point");
  }
  std::vector<double> v(grid.points);
  if (grid.points == 1) {
    v[0] = grid.max;
    return v;
  }
  const double steps = static_cast<double>(grid.points - 1);
  for (std::size_t i = 0; i < grid.points; ++i) {
    const double t = static_cast<double>(i) / steps;
    v[i] = grid.log_spaced ? std::exp(std::log(grid.min) + t * (std::log(grid.max) - std::log(grid.min)))
                           : grid.min + t * (grid.max - grid.min);
  }
  v.front() = grid.min;
  v.back() = grid.max;
  return v;
}

/// Relative error of each grid value under a tensor scale anchored at the
/// grid maximum. Flushed values report 1.
inline std::vector<ProfilePoint> error_profile(const FormatSpec& spec, const ProfileGrid& grid, Rounding rounding,
                                               std::uint64_t seed = 0) {
  const std::vector<double> values = grid_values(grid);
  const double delta = grid.max / max_finite(spec);
  const RandomStream root(seed);
  std::vector<ProfilePoint> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    RandomStream s = root.substream(i);
    const double v = values[i];
    const double q = decode(spec, encode(spec, v / delta, rounding, s)) * delta;
    out[i] = {v, q, q == 0.0 ? 1.0 : relative_error(v, q)};
  }
  return out;
}

enum class TensorCategory { kRhs, kLhs, kGradient };

inline std::string category_name(TensorCategory c) {
  switch (c) {
    case TensorCategory::kRhs: return "rhs";
    case TensorCategory::kLhs: return "lhs";
    case TensorCategory::kGradient: return "gradient";
  }
  return "?";
}

inline TensorCategory parse_category(std::string_view s) {
  if (s == "rhs" || s == "RHS") return TensorCategory::kRhs;
  if (s == "lhs" || s == "LHS") return TensorCategory::kLhs;
  if (s == "gradient" || s == "grad") return TensorCategory::kGradient;
  fail(ErrorCode::kInvalidArgument, "unknown tensor category '" + std::string(s) + "'");
}

struct RecommendOptions {
  /// Excess kurtosis at or above which a tensor counts as moderately heavy-tailed.
  double moderate_kurtosis = 1.0;
  /// Excess kurtosis at or above which a tensor counts as extremely heavy-tailed.
  double extreme_kurtosis = 10.0;
  /// Restrict the answer to one format.
  std::optional<FormatSpec> forced_format;
};

struct Recommendation {
  QuantConfig config;
  std::string rationale;
};

/// Rule table: light tails stay on tensor-level Int8, moderate tails move
/// Int8 to per-channel scales, gradients and extreme tails go to E5M2.
/// Int8 for heavy-tailed or gradient tensors needs fine-grained scales and
/// stochastic rounding.
inline Recommendation recommend(const Moments& stats, TensorCategory category, const RecommendOptions& opt = {}) {
  const double kurt = stats.excess_kurtosis.value_or(0.0);
  const bool extreme = kurt >= opt.extreme_kurtosis;
  const bool moderate = kurt >= opt.moderate_kurtosis;
  const bool gradient = category == TensorCategory::kGradient;
  Recommendation r;
  r.config.rounding = Rounding::kRtne;
  r.config.granularity = Granularity::kTensor;

  if (opt.forced_format && opt.forced_format->is_int8()) {
    r.config.spec = FormatSpec::int8();
    if (gradient || extreme) {
      r.config.granularity = Granularity::kFineGrained;
      r.config.rounding = Rounding::kStochastic;
      r.rationale = "int8 on heavy-tailed data needs fine-grained scales and stochastic rounding";
    } else if (moderate) {
      r.config.granularity = Granularity::kChannel;
      r.rationale = "moderate tails: finer int8 scale granularity recovers precision";
    } else {
      r.rationale = "light tails: tensor-level int8 is lossless";
    }
    return r;
  }
  if (opt.forced_format) {
    r.config.spec = *opt.forced_format;
    r.rationale = "fp8 formats hold their relative precision across the range at tensor level";
    return r;
  }
  if (gradient || extreme) {
    r.config.spec = FormatSpec::e5m2();
    r.rationale = gradient ? "upstream gradients are heavy-tailed: widest-range fp8"
                           : "extreme tails: widest-range fp8";
  } else if (moderate) {
    r.config.spec = FormatSpec::int8();
    r.config.granularity = Granularity::kChannel;
    r.rationale = "moderate tails: finer int8 scale granularity recovers precision";
  } else {
    r.config.spec = FormatSpec::int8();
    r.rationale = "light tails: tensor-level int8 is lossless";
  }
  return r;
}

}  // namespace q8lab

#endif  // Q8LAB_METRICS_HPP_
