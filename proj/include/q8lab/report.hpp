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

// Report serialization: CSV rows and JSON objects for ErrorReport, plus the
// experiment manifest every emitted report carries.

#ifndef Q8LAB_REPORT_HPP_
#define Q8LAB_REPORT_HPP_

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "q8lab/error.hpp"
#include "q8lab/metrics.hpp"

namespace q8lab {

inline constexpr std::string_view kVersion = "0.3.0";

/// Shortest text that round-trips the double; "nan" for NaN.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline const std::vector<std::string>& error_report_columns() {
  static const std::vector<std::string> cols = {"seed", "dist", "nu",     "format", "granularity", "rounding",
                                                "max",  "median", "mean", "p99",    "masked_count"};
  return cols;
}

inline std::string csv_header(const std::vector<std::string>& cols) {
  std::string out;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) out += ",";
    out += cols[i];
  }
  return out + "\n";
}

inline std::string to_csv_row(const ErrorReport& r) {
  const TrialMeta& m = r.meta;
  std::ostringstream os;
  os << m.seed << ',' << m.dist << ',' << (std::isnan(m.nu) ? std::string() : format_number(m.nu)) << ','
     << m.format << ',' << m.granularity << ',' << m.rounding << ',' << format_number(r.max) << ','
     << format_number(r.median) << ',' << format_number(r.mean) << ',' << format_number(r.p99) << ','
     << r.masked_count << '\n';
  return os.str();
}

inline nlohmann::json to_json(const ErrorReport& r) {
  nlohmann::json j;
  j["seed"] = r.meta.seed;
  j["dist"] = r.meta.dist;
  j["nu"] = std::isnan(r.meta.nu) ? nlohmann::json(nullptr) : nlohmann::json(r.meta.nu);
  j["format"] = r.meta.format;
  j["granularity"] = r.meta.granularity;
  j["rounding"] = r.meta.rounding;
  j["max"] = r.max;
  j["median"] = r.median;
  j["mean"] = r.mean;
  j["p99"] = r.p99;
  j["count"] = r.count;
  j["masked_count"] = r.masked_count;
  return j;
}

inline nlohmann::json to_json(const Moments& m) {
  nlohmann::json j;
  j["count"] = m.count;
  j["mean"] = m.mean;
  j["variance"] = m.variance;
  j["skew"] = m.skew ? nlohmann::json(*m.skew) : nlohmann::json(nullptr);
  j["excess_kurtosis"] = m.excess_kurtosis ? nlohmann::json(*m.excess_kurtosis) : nlohmann::json(nullptr);
  return j;
}

/// Fully resolved parameters of one command invocation.
using Params = std::map<std::string, std::string>;

struct Manifest {
  std::string command;
  Params params;
  std::string version{kVersion};
  std::string timestamp;

  nlohmann::json to_json() const {
    return nlohmann::json{{"command", command}, {"params", params}, {"version", version}, {"timestamp", timestamp}};
  }

  static Manifest from_json(const nlohmann::json& j) {
    Manifest m;
    try {
      m.command = j.at("command").get<std::string>();
      m.params = j.at("params").get<Params>();
      m.version = j.value("version", std::string(kVersion));
      m.timestamp = j.value("timestamp", std::string());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kParse, std::string("malformed manifest: ") + e.what());
    }
    return m;
  }
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline constexpr std::string_view kManifestPrefix = "# manifest: ";

inline std::string manifest_comment(const Manifest& m) {
  return std::string(kManifestPrefix) + m.to_json().dump() + "\n";
}

/// Finds the manifest in a CSV report (leading comment) or JSON report
/// ("manifest" member).
inline Manifest extract_manifest(std::string_view report) {
  if (report.substr(0, kManifestPrefix.size()) == kManifestPrefix) {
    const auto eol = report.find('\n');
    const auto body = report.substr(kManifestPrefix.size(), eol - kManifestPrefix.size());
    try {
      return Manifest::from_json(nlohmann::json::parse(body));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::kParse, std::string("manifest is not valid JSON: ") + e.what());
    }
  }
  try {
    const auto j = nlohmann::json::parse(report);
    if (j.is_object() && j.contains("manifest")) return Manifest::from_json(j.at("manifest"));
  } catch (const nlohmann::json::parse_error&) {
  }
  fail(ErrorCode::kParse, "report carries no manifest");
}

/// Removes the timestamp so two reports can be compared byte for byte.
inline std::string strip_timestamp(std::string report) {
  static constexpr std::string_view key = "\"timestamp\":\"";
  for (auto pos = report.find(key); pos != std::string::npos; pos = report.find(key, pos + key.size())) {
    const auto start = pos + key.size();
    const auto end = report.find('"', start);
    if (end == std::string::npos) break;
    report.erase(start, end - start);
  }
  return report;
}

}  // namespace q8lab

#endif  // Q8LAB_REPORT_HPP_
