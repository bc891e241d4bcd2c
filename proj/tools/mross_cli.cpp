/*
 * Copyright 2026 The MROSS Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// mross_cli {mse|coverage|timing|fit}. Settings apply in the order
// profile, config file, --set pairs, then the dedicated flags.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mross/harness.hpp"

namespace {

using mross::bench::ConfigError;
using mross::bench::ExperimentConfig;

struct CommonFlags {
  std::string config;
  std::string profile = "desk";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> workers;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value config file");
  cmd->add_option("--profile", f.profile, "base settings")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--out", f.out, "output CSV path");
  cmd->add_option("--workers", f.workers, "parallel workers (0: all cores)");
  cmd->add_option("--set", f.sets, "extra key=value setting (repeatable)");
}

ExperimentConfig build_config(const CommonFlags& f) {
  ExperimentConfig cfg = ExperimentConfig::profile(f.profile);
  if (!f.config.empty()) cfg = mross::bench::load_config(f.config, cfg);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(std::string_view(kv).substr(0, eq), std::string_view(kv).substr(eq + 1));
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.out = *f.out;
  if (f.workers) cfg.workers = *f.workers;
  return cfg;
}

template <class Table>
void emit(const ExperimentConfig& cfg, const Table& table, const std::vector<mross::bench::ResultRow>* rows) {
  mross::bench::write_csv_file(cfg.out, table);
  if (rows && !cfg.rows.empty()) mross::bench::write_csv_file(cfg.rows, *rows);
  mross::bench::write_csv(std::cout, table);
}

struct FitFlags {
  std::string data;
  std::size_t label_column = 0;
  bool no_intercept = false;
  std::size_t r = 1000;
  std::string method = "mross";
};

int run_fit(const CommonFlags& common, const FitFlags& ff) {
  ExperimentConfig cfg = build_config(common);
  auto csv = mross::read_csv(ff.data, ff.label_column, !ff.no_intercept);
  auto table = std::make_shared<const mross::PointTable>(mross::materialize_table(csv));
  const mross::bench::Method method = mross::bench::parse_method(ff.method);
  if (method == mross::bench::Method::Full) throw ConfigError("fit: method must be unif, osmac or mross");
  cfg.n = table->size();
  cfg.d = table->dim();
  if (cfg.r0 < 10 * cfg.d) throw ConfigError("fit: r0 must be at least 10*d = " + std::to_string(10 * cfg.d));
  if (cfg.r0 + ff.r >= cfg.n) throw ConfigError("fit: r0 + r must be below the number of rows");
  mross::CounterRng rng(mross::derive_seed(cfg.seed, "fit"));
  const auto f = mross::bench::fit_method(method, cfg, table, nullptr, ff.r, rng, true);
  std::cout << "coord,estimate,lo,hi\n";
  for (Eigen::Index j = 0; j < f.theta.size(); ++j) {
    const auto [lo, hi] = f.intervals[static_cast<std::size_t>(j)];
    std::printf("%lld,%.10g,%.10g,%.10g\n", static_cast<long long>(j), f.theta(j), lo, hi);
  }
  std::fprintf(stderr, "method=%s n=%zu d=%zu r0=%zu r=%zu realized_r=%zu converged=%d\n", ff.method.c_str(), cfg.n,
               cfg.d, cfg.r0, ff.r, f.realized_r, f.converged ? 1 : 0);
  return f.converged ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-resolution optimal subsampling: simulation harness and single fits"};
  app.require_subcommand(1);
  CommonFlags common;
  FitFlags ff;
  auto* mse = app.add_subcommand("mse", "MSE of each method against the reference parameter");
  auto* coverage = app.add_subcommand("coverage", "interval coverage and mean length");
  auto* timing = app.add_subcommand("timing", "mean wall-clock time per end-to-end fit");
  auto* fit = app.add_subcommand("fit", "one fit on a CSV file; the first r0 rows form the pilot");
  for (auto* c : {mse, coverage, timing, fit}) add_common(c, common);
  fit->add_option("--data", ff.data, "CSV file (label column in {-1,+1} or {0,1})")->required();
  fit->add_option("--label-column", ff.label_column, "zero-based label column");
  fit->add_flag("--no-intercept", ff.no_intercept, "features already hold the intercept column");
  fit->add_option("--r", ff.r, "expected subsample size");
  fit->add_option("--method", ff.method, "unif, osmac or mross");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) return run_fit(common, ff);
    const ExperimentConfig cfg = build_config(common);
    cfg.validate();
    std::vector<mross::bench::ResultRow> rows;
    if (mse->parsed()) emit(cfg, mross::bench::run_mse(cfg, &rows), &rows);
    if (coverage->parsed()) emit(cfg, mross::bench::run_coverage(cfg, &rows), &rows);
    if (timing->parsed()) emit(cfg, mross::bench::run_timing(cfg), nullptr);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
