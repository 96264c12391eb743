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

#ifndef Q8LAB_TENSOR_HPP_
#define Q8LAB_TENSOR_HPP_

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "q8lab/error.hpp"

namespace q8lab {

/// Semantic tag of a tensor axis. Values match the on-disk tag byte.
enum class AxisRole : std::uint8_t {
  kUnspecified = 0,
  kContracting = 1,
  kBatch = 2,
  kExample = 3,
  kChannel = 4,
  kOther = 5,
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major tensor of reference-precision reals. An empty role list
/// means the tensor is untagged.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, std::vector<AxisRole> roles = {})
      : shape_(std::move(shape)), data_(std::move(data)), roles_(std::move(roles)) {
    if (data_.size() != shape_size(shape_)) {
      fail(ErrorCode::kShapeMismatch, "tensor data length " + std::to_string(data_.size()) +
                                          " does not match shape " + shape_string(shape_));
    }
    if (!roles_.empty() && roles_.size() != shape_.size()) {
      fail(ErrorCode::kShapeMismatch, "axis role count does not match tensor rank");
    }
  }

  static Tensor zeros(Shape shape, std::vector<AxisRole> roles = {}) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), std::move(roles));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }

  const std::vector<AxisRole>& roles() const noexcept { return roles_; }
  bool tagged() const noexcept { return !roles_.empty(); }

  Tensor with_roles(std::vector<AxisRole> roles) const& {
    return Tensor(shape_, data_, std::move(roles));
  }
  Tensor with_roles(std::vector<AxisRole> roles) && {
    return Tensor(std::move(shape_), std::move(data_), std::move(roles));
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<AxisRole> roles_;
};

inline void require_finite(const Tensor& x, const char* what) {
  if (!x.all_finite()) fail(ErrorCode::kDomain, std::string(what) + " contains non-finite values");
}

// Tensor file: "Q8T1", u32 rank, u32 dims[rank], u8 tags[rank], then
// float32 data, all little-endian, row-major.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                 static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(b.data(), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) fail(ErrorCode::kParse, "truncated tensor file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("Q8T1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (std::size_t a = 0; a < t.rank(); ++a) {
    const auto tag = t.tagged() ? static_cast<char>(t.roles()[a]) : char{0};
    os.put(tag);
  }
  for (double v : t.data()) detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) fail(ErrorCode::kIo, "failed writing tensor");
}

/// Reads a tensor file. All-zero tags load as an untagged tensor; a zero tag
/// next to explicit tags means kOther.
inline Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || std::memcmp(magic.data(), "Q8T1", 4) != 0) {
    fail(ErrorCode::kParse, "bad tensor file magic (expected Q8T1)");
  }
  const std::uint32_t rank = detail::get_u32(is);
  if (rank > 16) fail(ErrorCode::kParse, "tensor rank " + std::to_string(rank) + " too large");
  Shape shape(rank);
  for (auto& d : shape) d = detail::get_u32(is);
  std::vector<AxisRole> roles(rank);
  bool any_tag = false;
  for (auto& r : roles) {
    const int tag = is.get();
    if (tag == std::char_traits<char>::eof()) fail(ErrorCode::kParse, "truncated tensor file");
    if (tag > static_cast<int>(AxisRole::kOther)) fail(ErrorCode::kParse, "invalid axis role tag " + std::to_string(tag));
    r = static_cast<AxisRole>(tag);
    any_tag = any_tag || tag != 0;
  }
  if (any_tag) {
    for (auto& r : roles) {
      if (r == AxisRole::kUnspecified) r = AxisRole::kOther;
    }
  } else {
    roles.clear();
  }
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(detail::get_u32(is)));
  if (is.peek() != std::char_traits<char>::eof()) fail(ErrorCode::kParse, "trailing bytes after tensor data");
  return Tensor(std::move(shape), std::move(data), std::move(roles));
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  write_tensor(os, t);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  return read_tensor(is);
}

}  // namespace q8lab

#endif  // Q8LAB_TENSOR_HPP_
