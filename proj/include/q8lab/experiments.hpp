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

// Experiment commands behind the q8lab tool. Each command takes a fully
// resolved parameter map and returns its report text; the same map is
// embedded in the report, which is what makes `replay` exact.

#ifndef Q8LAB_EXPERIMENTS_HPP_
#define Q8LAB_EXPERIMENTS_HPP_

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "q8lab/distributions.hpp"
#include "q8lab/error.hpp"
#include "q8lab/formats.hpp"
#include "q8lab/metrics.hpp"
#include "q8lab/qmatmul.hpp"
#include "q8lab/quantizer.hpp"
#include "q8lab/report.hpp"
#include "q8lab/tensor.hpp"
#include "q8lab/trainbench.hpp"

namespace q8lab {

struct CommandOutput {
  std::string text;
  /// Binary payload for commands that write a tensor (quantize).
  std::optional<Tensor> tensor;
};

namespace detail {

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline const std::string& param(const Params& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) fail(ErrorCode::kInvalidArgument, "missing parameter --" + key);
  return it->second;
}

inline double param_double(const Params& p, const std::string& key) {
  const std::string& s = param(p, key);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) fail(ErrorCode::kParse, "--" + key + " expects a number, got '" + s + "'");
  return v;
}

inline std::uint64_t param_u64(const Params& p, const std::string& key) {
  const std::string& s = param(p, key);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) fail(ErrorCode::kParse, "--" + key + " expects an unsigned integer, got '" + s + "'");
  return v;
}

inline std::vector<double> parse_number_list(std::string_view s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size()) fail(ErrorCode::kParse, "bad number '" + item + "' in list");
    out.push_back(v);
  }
  return out;
}

inline std::string stamp_csv(const std::string& command, const Params& params, const std::string& body) {
  Manifest m{command, params, std::string(kVersion), utc_timestamp()};
  return manifest_comment(m) + body;
}

inline std::string stamp_json(const std::string& command, const Params& params, nlohmann::json body) {
  Manifest m{command, params, std::string(kVersion), utc_timestamp()};
  body["manifest"] = m.to_json();
  return body.dump(2) + "\n";
}

}  // namespace detail

/// Seed fallback order: explicit value, then QUANT8_SEED, then 0.
inline std::string resolve_seed(const std::optional<std::string>& explicit_seed) {
  if (explicit_seed) return *explicit_seed;
  if (const char* env = std::getenv("QUANT8_SEED"); env != nullptr && *env != '\0') return env;
  return "0";
}

// ---------------------------------------------------------------- formats

inline CommandOutput cmd_formats(const Params& p) {
  std::string body = csv_header({"name", "kind", "exp_bits", "mantissa_bits", "bias", "max_finite", "min_normal",
                                 "min_subnormal", "finite_codes", "reserved_codes"});
  for (const auto& name : detail::split_list(detail::param(p, "formats"))) {
    const FormatSpec spec = parse_format(name);
    const auto codes = enumerate_codes(spec);
    const auto reserved = std::count_if(codes.begin(), codes.end(), [](const CodePoint& c) { return c.reserved; });
    std::ostringstream row;
    row << spec.name() << ',' << (spec.is_int8() ? "int8" : "minifloat") << ',' << spec.exp_bits() << ','
        << spec.mantissa_bits() << ',' << spec.bias() << ',' << format_number(max_finite(spec)) << ','
        << (spec.is_int8() ? std::string() : format_number(min_normal(spec))) << ','
        << (spec.is_int8() ? std::string() : format_number(min_subnormal(spec))) << ',' << (256 - reserved) << ','
        << reserved << '\n';
    body += row.str();
  }
  return {detail::stamp_csv("formats", p, body), std::nullopt};
}

// ---------------------------------------------------------- error-profile

inline CommandOutput cmd_error_profile(const Params& p) {
  const FormatSpec spec = parse_format(detail::param(p, "format"));
  ProfileGrid grid;
  grid.min = detail::param_double(p, "grid-min");
  grid.max = detail::param_double(p, "grid-max");
  grid.points = detail::param_u64(p, "points");
  const std::string& spacing = detail::param(p, "spacing");
  if (spacing != "log" && spacing != "linear") fail(ErrorCode::kInvalidArgument, "--spacing must be log or linear");
  grid.log_spaced = spacing == "log";
  const Rounding rounding = parse_rounding(detail::param(p, "rounding"));
  const auto curve = error_profile(spec, grid, rounding, detail::param_u64(p, "seed"));
  std::string body = csv_header({"value", "quantized", "relative_error"});
  for (const auto& pt : curve) {
    body += format_number(pt.value) + "," + format_number(pt.quantized) + "," + format_number(pt.relative_error) + "\n";
  }
  return {detail::stamp_csv("error-profile", p, body), std::nullopt};
}

// --------------------------------------------------------------- sweep-be

struct SweepConfig {
  DistSpec dist;
  std::vector<double> nus;  // empty: the distribution has no nu
  std::size_t size = 512;
  std::vector<FormatSpec> formats;
  std::vector<Granularity> granularities;
  Rounding rounding = Rounding::kRtne;
  std::size_t trials = 10;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: hardware concurrency
};

/// One backward-error summary per (nu, format, granularity, trial), ordered
/// by that key regardless of how trials were scheduled. Every format and
/// granularity in a trial sees the same L and R; operand seeds are shared
/// across nu.
inline std::vector<ErrorReport> run_sweep(const SweepConfig& cfg) {
  if (cfg.size == 0 || cfg.trials == 0 || cfg.formats.empty() || cfg.granularities.empty()) {
    fail(ErrorCode::kInvalidArgument, "sweep needs size, trials, formats and granularities");
  }
  const std::vector<double> nus = cfg.nus.empty() ? std::vector<double>{NAN} : cfg.nus;
  for (double nu : nus) {
    if (!std::isnan(nu)) {
      DistSpec d = cfg.dist;
      d.nu = nu;
      validate(d);
    }
  }
  const std::size_t per_task = cfg.formats.size() * cfg.granularities.size();
  const std::size_t tasks = nus.size() * cfg.trials;
  std::vector<ErrorReport> results(tasks * per_task);

  auto run_task = [&](std::size_t task) {
    const std::size_t nu_index = task / cfg.trials;
    const std::size_t trial = task % cfg.trials;
    const std::uint64_t trial_seed = derive_seed(cfg.seed, trial);
    DistSpec d = cfg.dist;
    if (!std::isnan(nus[nu_index])) d.nu = nus[nu_index];
    d.seed = derive_seed(trial_seed, 0);
    const Tensor lhs = sample(d, {cfg.size, cfg.size});
    d.seed = derive_seed(trial_seed, 1);
    const Tensor rhs = sample(d, {cfg.size, cfg.size});
    const ReferenceProduct exact = reference_matmul(lhs, rhs);
    const RandomStream rng(derive_seed(trial_seed, 2));
    for (std::size_t f = 0; f < cfg.formats.size(); ++f) {
      for (std::size_t g = 0; g < cfg.granularities.size(); ++g) {
        const QuantConfig qc{cfg.formats[f], cfg.rounding, cfg.granularities[g], false};
        const Tensor q = qmatmul(lhs, rhs, MatmulPlan{qc, qc, Accumulate::kWide}, rng);
        ErrorReport r = backward_error(exact, q).report;
        r.meta = {trial_seed,
                  family_name(cfg.dist.family),
                  nus[nu_index],
                  cfg.formats[f].name(),
                  std::string(granularity_name(cfg.granularities[g])),
                  std::string(rounding_name(cfg.rounding))};
        const std::size_t slot = ((nu_index * cfg.formats.size() + f) * cfg.granularities.size() + g) * cfg.trials + trial;
        results[slot] = r;
      }
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads ? cfg.threads : std::thread::hardware_concurrency(),
                                                           static_cast<unsigned>(tasks)));
  if (threads == 1) {
    for (std::size_t t = 0; t < tasks; ++t) run_task(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < tasks; t = next++) {
          try {
            run_task(t);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    pool.clear();
    if (error) std::rethrow_exception(error);
  }
  return results;
}

inline SweepConfig sweep_config_from(const Params& p) {
  SweepConfig cfg;
  cfg.dist = parse_dist(detail::param(p, "dist"));
  if (cfg.dist.family == DistFamily::kStudentT) {
    cfg.nus = detail::parse_number_list(detail::param(p, "nu-list"));
    if (cfg.nus.empty()) cfg.nus.push_back(cfg.dist.nu);
  }
  cfg.size = detail::param_u64(p, "size");
  for (const auto& f : detail::split_list(detail::param(p, "formats"))) cfg.formats.push_back(parse_format(f));
  for (const auto& g : detail::split_list(detail::param(p, "granularity"))) cfg.granularities.push_back(parse_granularity(g));
  cfg.rounding = parse_rounding(detail::param(p, "rounding"));
  cfg.trials = detail::param_u64(p, "trials");
  cfg.seed = detail::param_u64(p, "seed");
  if (auto it = p.find("threads"); it != p.end()) cfg.threads = static_cast<unsigned>(detail::param_u64(p, "threads"));
  return cfg;
}

inline CommandOutput cmd_sweep_be(const Params& p) {
  const auto reports = run_sweep(sweep_config_from(p));
  std::string body = csv_header(error_report_columns());
  for (const auto& r : reports) body += to_csv_row(r);
  return {detail::stamp_csv("sweep-be", p, body), std::nullopt};
}

// ---------------------------------------------------------------- profile

inline CommandOutput cmd_profile(const Params& p) {
  const Tensor x = load_tensor(detail::param(p, "tensor-file"));
  nlohmann::json body = to_json(moments(x));
  body["shape"] = x.shape();
  return {detail::stamp_json("profile", p, body), std::nullopt};
}

// --------------------------------------------------------------- quantize

/// Fake-quantizes a tensor file; the summary JSON carries the manifest.
inline CommandOutput cmd_quantize(const Params& p) {
  const Tensor x = load_tensor(detail::param(p, "in"));
  QuantConfig cfg;
  cfg.spec = parse_format(detail::param(p, "format"));
  cfg.granularity = parse_granularity(detail::param(p, "granularity"));
  cfg.rounding = parse_rounding(detail::param(p, "rounding"));
  const RandomStream rng(detail::param_u64(p, "seed"));
  const QuantizedTensor q = quantize(x, cfg, rng);
  Tensor out = dequantize(q);
  double max_err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) max_err = std::max(max_err, std::fabs(x[i] - out[i]));
  nlohmann::json body;
  body["shape"] = x.shape();
  body["groups"] = q.scales.group_count();
  body["scale_max"] = *std::max_element(q.scales.scales.begin(), q.scales.scales.end());
  body["max_abs_error"] = max_err;
  body["warnings"] = q.scales.warnings;
  return {detail::stamp_json("quantize", p, body), std::move(out)};
}

// ------------------------------------------------------------- train-demo

/// Reads "key = value" lines; '#' starts a comment.
inline Params parse_train_config(std::istream& is) {
  Params out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kParse, "config line " + std::to_string(lineno) + ": expected key = value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

inline const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys = {"steps", "batch", "lr", "seed", "eval_every", "eval_size",
                                                "label_noise", "gradient_tail", "inputs", "hidden", "heads",
                                                "classes", "rhs", "lhs", "gradient"};
  return keys;
}

/// Fills every train key (prefixed "train.") from a parsed config, with defaults.
inline Params resolve_train_params(const Params& config) {
  for (const auto& [k, v] : config) {
    const auto& keys = train_config_keys();
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) fail(ErrorCode::kParse, "unknown train config key '" + k + "'");
  }
  const TrainRun d;
  auto get = [&](const std::string& k, std::string fallback) {
    auto it = config.find(k);
    return it == config.end() ? fallback : it->second;
  };
  Params out;
  out["train.steps"] = get("steps", std::to_string(d.steps));
  out["train.batch"] = get("batch", std::to_string(d.batch));
  out["train.lr"] = get("lr", format_number(d.learning_rate));
  out["train.seed"] = get("seed", "0");
  out["train.eval_every"] = get("eval_every", std::to_string(d.eval_every));
  out["train.eval_size"] = get("eval_size", std::to_string(d.eval_size));
  out["train.label_noise"] = get("label_noise", format_number(d.label_noise));
  out["train.gradient_tail"] = get("gradient_tail", format_number(d.gradient_tail));
  out["train.inputs"] = get("inputs", std::to_string(d.dims.inputs));
  out["train.hidden"] = get("hidden", std::to_string(d.dims.hidden));
  out["train.heads"] = get("heads", std::to_string(d.dims.heads));
  out["train.classes"] = get("classes", std::to_string(d.dims.classes));
  out["train.rhs"] = get("rhs", "off");
  out["train.lhs"] = get("lhs", "off");
  out["train.gradient"] = get("gradient", "off");
  return out;
}

inline TrainRun train_run_from(const Params& p) {
  auto cat = [&](const std::string& key) -> std::optional<QuantConfig> {
    const std::string& v = detail::param(p, key);
    if (v == "off") return std::nullopt;
    return parse_quant_config(v);
  };
  TrainRun run;
  run.steps = detail::param_u64(p, "train.steps");
  run.batch = detail::param_u64(p, "train.batch");
  run.learning_rate = detail::param_double(p, "train.lr");
  run.seed = detail::param_u64(p, "train.seed");
  run.eval_every = detail::param_u64(p, "train.eval_every");
  run.eval_size = detail::param_u64(p, "train.eval_size");
  run.label_noise = detail::param_double(p, "train.label_noise");
  run.gradient_tail = detail::param_double(p, "train.gradient_tail");
  run.dims.inputs = detail::param_u64(p, "train.inputs");
  run.dims.hidden = detail::param_u64(p, "train.hidden");
  run.dims.heads = detail::param_u64(p, "train.heads");
  run.dims.classes = detail::param_u64(p, "train.classes");
  run.categories = {cat("train.rhs"), cat("train.lhs"), cat("train.gradient")};
  return run;
}

inline CommandOutput cmd_train_demo(const Params& p) {
  const TrainResult r = train(train_run_from(p));
  std::string body = csv_header({"step", "loss", "eval"});
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    body += std::to_string(r.steps[i]) + "," + format_number(r.loss[i]) + "," + format_number(r.eval[i]) + "\n";
  }
  body += "# auc: " + format_number(r.auc) + (r.diverged ? " (diverged)" : "") + "\n";
  return {detail::stamp_csv("train-demo", p, body), std::nullopt};
}

// -------------------------------------------------------------- recommend

inline CommandOutput cmd_recommend(const Params& p) {
  const Tensor x = load_tensor(detail::param(p, "tensor-file"));
  const TensorCategory category = parse_category(detail::param(p, "category"));
  RecommendOptions opt;
  opt.moderate_kurtosis = detail::param_double(p, "k1");
  opt.extreme_kurtosis = detail::param_double(p, "k2");
  if (const auto& f = detail::param(p, "format"); f != "auto") opt.forced_format = parse_format(f);
  const Moments stats = moments(x);
  const Recommendation rec = recommend(stats, category, opt);
  nlohmann::json body;
  body["category"] = category_name(category);
  body["format"] = rec.config.spec.name();
  body["granularity"] = granularity_name(rec.config.granularity);
  body["rounding"] = rounding_name(rec.config.rounding);
  body["rationale"] = rec.rationale;
  body["stats"] = to_json(stats);
  return {detail::stamp_json("recommend", p, body), std::nullopt};
}

// ------------------------------------------------------------------ dispatch

inline CommandOutput run_command(const std::string& command, const Params& p) {
  if (command == "formats") return cmd_formats(p);
  if (command == "error-profile") return cmd_error_profile(p);
  if (command == "sweep-be") return cmd_sweep_be(p);
  if (command == "profile") return cmd_profile(p);
  if (command == "quantize") return cmd_quantize(p);
  if (command == "train-demo") return cmd_train_demo(p);
  if (command == "recommend") return cmd_recommend(p);
  fail(ErrorCode::kInvalidArgument, "unknown command '" + command + "'");
}

/// Re-runs the command recorded in a report's manifest.
inline CommandOutput replay(std::string_view report) {
  const Manifest m = extract_manifest(report);
  return run_command(m.command, m.params);
}

}  // namespace q8lab

#endif  // Q8LAB_EXPERIMENTS_HPP_
