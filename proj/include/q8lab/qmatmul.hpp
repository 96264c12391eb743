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

// Quantized matrix multiplication: scale -> encode -> multiply-accumulate
// -> descale.
//
// Operands follow the [batch..., M, K] x [batch..., K, N] convention with
// zero or one leading batch axis. Every output element (b, i, j) is
//
//   out = MAC_k(decode(qL[b,i,k]), decode(qR[b,k,j])) * (dL[b,i] * dR[b,j])
//
// with the MAC summed in ascending k. Int8 x Int8 accumulates exactly in
// integers; every other combination accumulates in binary64.

#ifndef Q8LAB_QMATMUL_HPP_
#define Q8LAB_QMATMUL_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "q8lab/error.hpp"
#include "q8lab/formats.hpp"
#include "q8lab/quantizer.hpp"
#include "q8lab/random.hpp"
#include "q8lab/tensor.hpp"

namespace q8lab {

enum class Accumulate {
  kWide,
  /// Rounds the running sum to bfloat16 after every addition.
  kBf16Demo,
};

struct MatmulPlan {
  /// std::nullopt leaves that operand in reference precision.
  std::optional<QuantConfig> lhs;
  std::optional<QuantConfig> rhs;
  Accumulate accumulate = Accumulate::kWide;
};

struct MatmulGeometry {
  std::size_t batch = 1;
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t n = 0;
  bool batched = false;
};

inline MatmulGeometry matmul_geometry(const Tensor& lhs, const Tensor& rhs) {
  if (lhs.rank() != rhs.rank() || lhs.rank() < 2 || lhs.rank() > 3) {
    fail(ErrorCode::kShapeMismatch, "matmul operands must both be rank 2 or both rank 3, got " +
                                        shape_string(lhs.shape()) + " and " + shape_string(rhs.shape()));
  }
  MatmulGeometry g;
  g.batched = lhs.rank() == 3;
  const std::size_t off = g.batched ? 1 : 0;
  if (g.batched) {
    if (lhs.dim(0) != rhs.dim(0)) fail(ErrorCode::kShapeMismatch, "batch sizes differ");
    g.batch = lhs.dim(0);
  }
  g.m = lhs.dim(off);
  g.k = lhs.dim(off + 1);
  g.n = rhs.dim(off + 1);
  if (rhs.dim(off) != g.k) {
    fail(ErrorCode::kShapeMismatch, "contraction sizes differ: " + shape_string(lhs.shape()) + " x " +
                                        shape_string(rhs.shape()));
  }
  if (g.k == 0) fail(ErrorCode::kShapeMismatch, "empty contraction");
  return g;
}

inline Shape output_shape(const MatmulGeometry& g) {
  return g.batched ? Shape{g.batch, g.m, g.n} : Shape{g.m, g.n};
}

/// Exact product and the elementwise-absolute product |L|.|R|.
struct ReferenceProduct {
  Tensor product;
  Tensor abs_product;
};

namespace detail {

// out[b] += a[b] * c[b] for row-major slices, summing over k in order.
template <typename T, typename Acc>
void mac_slices(const T* a, const T* c, Acc* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Acc* row = out + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const Acc av = static_cast<Acc>(a[i * k + kk]);
      const T* crow = c + kk * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * static_cast<Acc>(crow[j]);
    }
  }
}

inline void mac_bf16(const double* a, const double* c, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      for (std::size_t j = 0; j < n; ++j) {
        out[i * n + j] = round_to_bfloat16(out[i * n + j] + av * c[kk * n + j]);
      }
    }
  }
}

}  // namespace detail

inline ReferenceProduct reference_matmul(const Tensor& lhs, const Tensor& rhs) {
  const MatmulGeometry g = matmul_geometry(lhs, rhs);
  std::vector<double> prod(g.batch * g.m * g.n, 0.0);
  std::vector<double> absprod(prod.size(), 0.0);
  std::vector<double> abs_l(lhs.size());
  std::vector<double> abs_r(rhs.size());
  for (std::size_t i = 0; i < abs_l.size(); ++i) abs_l[i] = std::fabs(lhs[i]);
  for (std::size_t i = 0; i < abs_r.size(); ++i) abs_r[i] = std::fabs(rhs[i]);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const std::size_t lo = b * g.m * g.k;
    const std::size_t ro = b * g.k * g.n;
    const std::size_t oo = b * g.m * g.n;
    detail::mac_slices(lhs.data().data() + lo, rhs.data().data() + ro, prod.data() + oo, g.m, g.k, g.n);
    detail::mac_slices(abs_l.data() + lo, abs_r.data() + ro, absprod.data() + oo, g.m, g.k, g.n);
  }
  return {Tensor(output_shape(g), std::move(prod)), Tensor(output_shape(g), std::move(absprod))};
}

namespace detail {

// One operand after scaling and encoding, laid out for the MAC loop.
struct PreparedOperand {
  std::vector<double> values;          // decoded codes (or raw values when not quantized)
  std::vector<std::int32_t> integers;  // Int8 codes, filled only for Int8 operands
  std::vector<double> vector_scale;    // delta per (batch, row) for L or (batch, column) for R
  bool is_int8 = false;
};

// Roles implied by the matmul for an untagged operand.
inline std::vector<AxisRole> operand_roles(const Tensor& x, bool is_lhs) {
  if (x.tagged()) return x.roles();
  std::vector<AxisRole> roles(x.rank(), AxisRole::kBatch);
  const std::size_t r = x.rank();
  roles[r - 2] = is_lhs ? AxisRole::kChannel : AxisRole::kContracting;
  roles[r - 1] = is_lhs ? AxisRole::kContracting : AxisRole::kChannel;
  return roles;
}

inline PreparedOperand prepare_operand(const Tensor& x, const std::optional<QuantConfig>& cfg, bool is_lhs,
                                       const MatmulGeometry& g, const RandomStream& rng) {
  PreparedOperand op;
  const std::size_t outer = is_lhs ? g.m : g.n;
  if (!cfg) {
    op.values.assign(x.data().begin(), x.data().end());
    op.vector_scale.assign(g.batch * outer, 1.0);
    return op;
  }
  const Tensor tagged = x.with_roles(operand_roles(x, is_lhs));
  const QuantizedTensor q = quantize(tagged, *cfg, rng);

  // Each inner product must see a single scale along the contraction.
  op.vector_scale.resize(g.batch * outer);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < outer; ++o) {
      auto element = [&](std::size_t kk) {
        return is_lhs ? (b * g.m + o) * g.k + kk : (b * g.k + kk) * g.n + o;
      };
      const std::uint32_t group = q.scales.group_map[element(0)];
      for (std::size_t kk = 1; kk < g.k; ++kk) {
        if (q.scales.group_map[element(kk)] != group) {
          fail(ErrorCode::kIncompatibleGroups,
               std::string(is_lhs ? "lhs" : "rhs") + " scale groups split the contracting axis");
        }
      }
      op.vector_scale[b * outer + o] = q.scales.scales[group];
    }
  }
  op.values.resize(q.codes.size());
  for (std::size_t i = 0; i < q.codes.size(); ++i) op.values[i] = decode(q.spec, q.codes[i]);
  if (q.spec.is_int8()) {
    op.is_int8 = true;
    op.integers.resize(q.codes.size());
    for (std::size_t i = 0; i < q.codes.size(); ++i) op.integers[i] = static_cast<std::int8_t>(q.codes[i].raw);
  }
  return op;
}

}  // namespace detail

/// Quantized product of rank-2 or rank-3 (leading batch axis) operands.
/// The lhs quantizer uses rng.substream(0), the rhs rng.substream(1).
inline Tensor qmatmul(const Tensor& lhs, const Tensor& rhs, const MatmulPlan& plan, const RandomStream& rng) {
  const MatmulGeometry g = matmul_geometry(lhs, rhs);
  require_finite(lhs, "lhs");
  require_finite(rhs, "rhs");
  const auto l = detail::prepare_operand(lhs, plan.lhs, true, g, rng.substream(0));
  const auto r = detail::prepare_operand(rhs, plan.rhs, false, g, rng.substream(1));

  const std::size_t slice = g.m * g.n;
  std::vector<double> out(g.batch * slice, 0.0);
  const bool integer_path = l.is_int8 && r.is_int8 && plan.accumulate == Accumulate::kWide;
  // 127 * 127 * k must fit the accumulator.
  const bool int32_safe = g.k < static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max() / (127 * 127));
  std::vector<std::int32_t> acc32;
  std::vector<std::int64_t> acc64;

  for (std::size_t b = 0; b < g.batch; ++b) {
    const std::size_t lo = b * g.m * g.k;
    const std::size_t ro = b * g.k * g.n;
    double* o = out.data() + b * slice;
    if (integer_path && int32_safe) {
      acc32.assign(slice, 0);
      detail::mac_slices(l.integers.data() + lo, r.integers.data() + ro, acc32.data(), g.m, g.k, g.n);
      for (std::size_t e = 0; e < slice; ++e) o[e] = static_cast<double>(acc32[e]);
    } else if (integer_path) {
      acc64.assign(slice, 0);
      detail::mac_slices(l.integers.data() + lo, r.integers.data() + ro, acc64.data(), g.m, g.k, g.n);
      for (std::size_t e = 0; e < slice; ++e) o[e] = static_cast<double>(acc64[e]);
    } else if (plan.accumulate == Accumulate::kBf16Demo) {
      detail::mac_bf16(l.values.data() + lo, r.values.data() + ro, o, g.m, g.k, g.n);
    } else {
      detail::mac_slices(l.values.data() + lo, r.values.data() + ro, o, g.m, g.k, g.n);
    }
    const double* ls = l.vector_scale.data() + b * g.m;
    const double* rs = r.vector_scale.data() + b * g.n;
    for (std::size_t i = 0; i < g.m; ++i) {
      for (std::size_t j = 0; j < g.n; ++j) o[i * g.n + j] *= ls[i] * rs[j];
    }
  }
  return Tensor(output_shape(g), std::move(out));
}

/// qmatmul over [B, M, K] x [B, K, N]. Scale groups are computed over the
/// whole batched operand, so tensor and channel scales are shared across
/// slices while fine-grained scales are per batch index.
inline Tensor batched_qmatmul(const Tensor& lhs, const Tensor& rhs, const MatmulPlan& plan,
                              const RandomStream& rng) {
  if (lhs.rank() != 3 || rhs.rank() != 3) {
    fail(ErrorCode::kShapeMismatch, "batched_qmatmul expects rank-3 operands");
  }
  return qmatmul(lhs, rhs, plan, rng);
}

}  // namespace q8lab

#endif  // Q8LAB_QMATMUL_HPP_
