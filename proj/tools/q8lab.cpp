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

// q8lab: command-line front end for the 8-bit numerics lab.
//
// On failure every command prints exactly one line to stderr,
//   error: <CODE>: <message>
// and exits with status 2 (usage errors) or 1 (everything else).

#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "q8lab/experiments.hpp"

namespace {

using q8lab::Params;

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os || !(os << text)) q8lab::fail(q8lab::ErrorCode::kIo, "cannot write '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) q8lab::fail(q8lab::ErrorCode::kIo, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct Invocation {
  std::string command;
  Params params;
  std::string out;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"q8lab: 8-bit training numerics lab"};
  app.require_subcommand(1);
  Invocation inv;
  std::optional<std::string> seed;

  auto* formats = app.add_subcommand("formats", "Print range constants of 8-bit formats");
  std::string format_list = "int8,e4m3,e5m2";
  formats->add_option("names", format_list, "Comma-separated format names (int8, e4m3, e5m2, eXmY[bZ])");
  formats->add_option("--out", inv.out, "Output CSV (default stdout)");

  auto* profile_cmd = app.add_subcommand("error-profile", "Relative-error profile of one format");
  std::string ep_format = "e4m3", ep_rounding = "rtne", ep_spacing = "log";
  std::string ep_min = "0.0001", ep_max = "1", ep_points = "256";
  profile_cmd->add_option("--format", ep_format);
  profile_cmd->add_option("--grid-min", ep_min);
  profile_cmd->add_option("--grid-max", ep_max);
  profile_cmd->add_option("--points", ep_points);
  profile_cmd->add_option("--spacing", ep_spacing, "log or linear");
  profile_cmd->add_option("--rounding", ep_rounding, "rtne or stochastic");
  profile_cmd->add_option("--seed", seed);
  profile_cmd->add_option("--out", inv.out);

  auto* sweep = app.add_subcommand("sweep-be", "Backward-error sweep of quantized matmuls");
  std::string sw_dist = "t:nu=3", sw_nus = "2.5,3,5,10,30", sw_size = "512", sw_formats = "int8,e4m3,e5m2";
  std::string sw_gran = "tensor,channel", sw_rounding = "rtne", sw_trials = "10";
  std::optional<std::string> sw_threads;
  sweep->add_option("--dist", sw_dist, "t:nu=3 | normal:mu=0,sigma=1 | lognormal:mu=0,sigma=1");
  sweep->add_option("--nu-list", sw_nus);
  sweep->add_option("--size", sw_size);
  sweep->add_option("--formats", sw_formats);
  sweep->add_option("--granularity", sw_gran, "Comma-separated: tensor, channel (per-vector), fine-grained");
  sweep->add_option("--rounding", sw_rounding);
  sweep->add_option("--trials", sw_trials);
  sweep->add_option("--seed", seed);
  sweep->add_option("--threads", sw_threads, "Worker threads (default: all cores)");
  sweep->add_option("--out", inv.out);

  auto* moments_cmd = app.add_subcommand("profile", "Moments of a tensor file");
  std::string tensor_file;
  moments_cmd->add_option("--tensor-file", tensor_file)->required();
  moments_cmd->add_option("--out", inv.out);

  auto* quant = app.add_subcommand("quantize", "Fake-quantize a tensor file");
  std::string q_in, q_out, q_format = "int8", q_gran = "tensor", q_rounding = "rtne";
  quant->add_option("--in", q_in)->required();
  quant->add_option("--out", q_out)->required();
  quant->add_option("--format", q_format);
  quant->add_option("--granularity", q_gran);
  quant->add_option("--rounding", q_rounding);
  quant->add_option("--seed", seed);
  quant->add_option("--summary", inv.out, "Summary JSON (default stdout)");

  auto* train = app.add_subcommand("train-demo", "Toy mixed-precision training run");
  std::string config_path;
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--out", inv.out, "Curves CSV (default stdout)");

  auto* rec = app.add_subcommand("recommend", "Recommend a format for a tensor");
  std::string category = "rhs", forced = "auto", k1 = "1", k2 = "10";
  rec->add_option("--tensor-file", tensor_file)->required();
  rec->add_option("--category", category, "rhs, lhs or gradient");
  rec->add_option("--format", forced, "Restrict to one format (default auto)");
  rec->add_option("--k1", k1, "Moderate excess-kurtosis threshold");
  rec->add_option("--k2", k2, "Extreme excess-kurtosis threshold");
  rec->add_option("--out", inv.out);

  auto* rep = app.add_subcommand("replay", "Regenerate a report from its embedded manifest");
  std::string report_path;
  rep->add_option("--report", report_path)->required();
  rep->add_option("--out", inv.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: E_USAGE: " << e.what() << "\n";
    return 2;
  }

  try {
    if (formats->parsed()) {
      inv = {"formats", {{"formats", format_list}}, inv.out};
    } else if (profile_cmd->parsed()) {
      inv = {"error-profile",
             {{"format", ep_format},
              {"grid-min", ep_min},
              {"grid-max", ep_max},
              {"points", ep_points},
              {"spacing", ep_spacing},
              {"rounding", ep_rounding},
              {"seed", q8lab::resolve_seed(seed)}},
             inv.out};
    } else if (sweep->parsed()) {
      Params p{{"dist", sw_dist},         {"nu-list", sw_nus},   {"size", sw_size},
               {"formats", sw_formats},   {"granularity", sw_gran}, {"rounding", sw_rounding},
               {"trials", sw_trials},     {"seed", q8lab::resolve_seed(seed)}};
      if (sw_threads) p["threads"] = *sw_threads;
      inv = {"sweep-be", p, inv.out};
    } else if (moments_cmd->parsed()) {
      inv = {"profile", {{"tensor-file", tensor_file}}, inv.out};
    } else if (quant->parsed()) {
      inv = {"quantize",
             {{"in", q_in},
              {"out", q_out},
              {"format", q_format},
              {"granularity", q_gran},
              {"rounding", q_rounding},
              {"seed", q8lab::resolve_seed(seed)}},
             inv.out};
    } else if (train->parsed()) {
      Params config;
      if (!config_path.empty()) {
        std::istringstream is(read_text(config_path));
        config = q8lab::parse_train_config(is);
      }
      inv = {"train-demo", q8lab::resolve_train_params(config), inv.out};
    } else if (rec->parsed()) {
      inv = {"recommend",
             {{"tensor-file", tensor_file}, {"category", category}, {"format", forced}, {"k1", k1}, {"k2", k2}},
             inv.out};
    } else if (rep->parsed()) {
      const q8lab::Manifest m = q8lab::extract_manifest(read_text(report_path));
      inv = {m.command, m.params, inv.out};
    }

    const q8lab::CommandOutput result = q8lab::run_command(inv.command, inv.params);
    if (result.tensor) q8lab::save_tensor(q8lab::detail::param(inv.params, "out"), *result.tensor);
    write_text(inv.out, result.text);
  } catch (const q8lab::Error& e) {
    std::cerr << "error: " << q8lab::error_code_name(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: E_INTERNAL: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
