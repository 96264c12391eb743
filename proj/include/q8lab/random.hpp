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

#ifndef Q8LAB_RANDOM_HPP_
#define Q8LAB_RANDOM_HPP_

#include <cstdint>

namespace q8lab {

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64 output function.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based random stream.
///
/// The n-th draw is a pure function of (key, n), and substreams are keyed by
/// (parent key, index), so any element-indexed consumer produces the same
/// values no matter in which order elements are visited.
class RandomStream {
 public:
  constexpr explicit RandomStream(std::uint64_t seed = 0) noexcept
      : key_(detail::mix64(seed + detail::kGolden)) {}

  constexpr RandomStream substream(std::uint64_t index) const noexcept {
    RandomStream child;
    child.key_ = detail::mix64(key_ ^ detail::mix64((index + 1) * detail::kGolden));
    return child;
  }

  constexpr std::uint64_t next_u64() noexcept {
    return detail::mix64(key_ + (++counter_) * detail::kGolden);
  }

  /// Uniform on [0, 1) with 53 random bits.
  constexpr double next_unit() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1].
  constexpr double next_open_unit() noexcept {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Derives an independent 64-bit seed from a base seed and an index.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return detail::mix64(detail::mix64(base) ^ (index * detail::kGolden + 0x632BE59BD9B4E019ULL));
}

}  // namespace q8lab

#endif  // Q8LAB_RANDOM_HPP_
