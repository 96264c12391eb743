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

#ifndef Q8LAB_ERROR_HPP_
#define Q8LAB_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace q8lab {

enum class ErrorCode {
  kDomain,
  kInvalidArgument,
  kShapeMismatch,
  kIncompatibleGroups,
  kUnknownFormat,
  kParse,
  kIo,
};

constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDomain: return "E_DOMAIN";
    case ErrorCode::kInvalidArgument: return "E_INVALID_ARGUMENT";
    case ErrorCode::kShapeMismatch: return "E_SHAPE_MISMATCH";
    case ErrorCode::kIncompatibleGroups: return "E_INCOMPATIBLE_GROUPS";
    case ErrorCode::kUnknownFormat: return "E_UNKNOWN_FORMAT";
    case ErrorCode::kParse: return "E_PARSE";
    case ErrorCode::kIo: return "E_IO";
  }
  return "E_UNKNOWN";
}

/// Every failure raised by the library carries a stable machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace q8lab

#endif  // Q8LAB_ERROR_HPP_
