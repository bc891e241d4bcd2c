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
#pragma once

// Monte Carlo harness: MSE curves, interval coverage and timing for the
// subsampling estimators on the synthetic cases, written as CSV.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "mross/baselines.hpp"
#include "mross/data.hpp"
#include "mross/mross.hpp"
#include "mross/reference.hpp"
#include "mross/rng.hpp"

namespace mross::bench {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Method { Unif, Osmac, Mross, Full };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Unif: return "unif";
    case Method::Osmac: return "osmac";
    case Method::Mross: return "mross";
    case Method::Full: return "full";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "unif") return Method::Unif;
  if (s == "osmac") return Method::Osmac;
  if (s == "mross") return Method::Mross;
  if (s == "full") return Method::Full;
  throw ConfigError("unknown method '" + std::string(s) + "' (expected unif, osmac, mross or full)");
}

struct ExperimentConfig {
  int case_id = 1;
  std::size_t n = 50000;
  std::size_t d = 21;
  std::size_t r0 = 500;
  std::vector<std::size_t> r_list{2000, 3000, 4000, 5000};
  std::size_t S = 200;
  LossSpec loss = LossSpec::logistic();
  std::optional<ThresholdPolicy> threshold;  // nullopt: loss-specific default
  std::vector<Method> methods{Method::Unif, Method::Osmac, Method::Mross};
  std::uint64_t seed = 20260101;
  std::string out = "results.csv";
  unsigned workers = 0;  // 0: hardware concurrency
  double level = 0.95;
  std::vector<std::size_t> coords{0, 1};
  std::size_t repeats = 100;  // timing only
  bool population_term = true;
  RuleKind rule = RuleKind::LOpt;
  bool truncate = false;
  std::string theta_cache;  // empty: <out>.theta
  std::string rows;         // optional per-replicate CSV
  SolverOptions solver;

  static ExperimentConfig profile(std::string_view name) {
    ExperimentConfig c;
    if (name == "desk") return c;
    if (name == "paper") {
      c.n = 500000;
      c.r0 = 1000;
      c.S = 500;
      return c;
    }
    throw ConfigError("unknown profile '" + std::string(name) + "' (expected desk or paper)");
  }

  /// Fixed 6.9 (logistic) and 5.9 (DWD); the eta = 0.99 rule otherwise.
  ThresholdPolicy threshold_policy() const {
    if (threshold) return *threshold;
    switch (loss.kind) {
      case LossKind::Logistic: return ThresholdPolicy::fixed(6.9);
      case LossKind::Dwd: return ThresholdPolicy::fixed(5.9);
      case LossKind::SquaredHinge: return ThresholdPolicy::eta_level(0.99);
    }
    return ThresholdPolicy::eta_level(0.99);
  }

  std::string theta_cache_path() const { return theta_cache.empty() ? out + ".theta" : theta_cache; }

  void set(std::string_view key, std::string_view value);
  void validate() const;
};

namespace detail {

using mross::detail::parse_double;
using mross::detail::split_commas;
using mross::detail::trim;

inline std::string lower(std::string_view s) {
  std::string o(s);
  std::transform(o.begin(), o.end(), o.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return o;
}

inline double to_double(std::string_view key, std::string_view v) {
  double x = 0.0;
  if (!parse_double(trim(v), x)) throw ConfigError("key '" + std::string(key) + "': not a number: '" + std::string(v) + "'");
  return x;
}

inline std::size_t to_size(std::string_view key, std::string_view v) {
  const double x = to_double(key, v);
  if (x < 0.0 || x != std::floor(x) || x > 1e15) {
    throw ConfigError("key '" + std::string(key) + "': expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return static_cast<std::size_t>(x);
}

inline std::uint64_t to_u64(std::string_view key, std::string_view v) {
  v = trim(v);
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + std::string(key) + "': expected an unsigned integer, got '" + std::string(v) + "'");
  }
  return x;
}

inline bool to_bool(std::string_view key, std::string_view v) {
  const std::string s = lower(trim(v));
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError("key '" + std::string(key) + "': expected a boolean, got '" + std::string(v) + "'");
}

inline std::vector<std::string_view> list_items(std::string_view v) {
  std::vector<std::string_view> out;
  for (auto f : split_commas(v)) {
    f = trim(f);
    if (!f.empty()) out.push_back(f);
  }
  return out;
}

inline ThresholdPolicy parse_threshold(std::string_view v) {
  const std::string s = lower(trim(v));
  if (s == "none" || s == "inf") return ThresholdPolicy::none();
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ConfigError("threshold: expected auto, none, fixed:C or eta:LEVEL, got '" + s + "'");
  const std::string kind = s.substr(0, colon);
  const double x = to_double("threshold", std::string_view(s).substr(colon + 1));
  if (kind == "fixed") {
    if (!(x > 0.0)) throw ConfigError("threshold: fixed C must be positive");
    return ThresholdPolicy::fixed(x);
  }
  if (kind == "eta") {
    if (!(x > 0.5 && x < 1.0)) throw ConfigError("threshold: eta level must lie in (0.5, 1)");
    return ThresholdPolicy::eta_level(x);
  }
  if (kind == "lograte") return {ThresholdKind::LogRate, x, 0.0};
  if (kind == "powerrate") return {ThresholdKind::PowerRate, x, 0.125};
  throw ConfigError("threshold: unknown policy '" + kind + "'");
}

}  // namespace detail

inline void ExperimentConfig::set(std::string_view key_in, std::string_view value) {
  using namespace detail;
  const std::string key = lower(trim(key_in));
  value = trim(value);
  if (key == "case") {
    const auto c = to_size(key, value);
    if (c < 1 || c > 6) throw ConfigError("case must be 1..6");
    case_id = static_cast<int>(c);
  } else if (key == "n") {
    n = to_size(key, value);
  } else if (key == "d") {
    d = to_size(key, value);
  } else if (key == "r0") {
    r0 = to_size(key, value);
  } else if (key == "r_list") {
    r_list.clear();
    for (auto f : list_items(value)) r_list.push_back(to_size(key, f));
  } else if (key == "s") {
    S = to_size(key, value);
  } else if (key == "loss") {
    const double g = loss.gamma;
    try {
      loss.kind = parse_loss_kind(lower(value));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("loss: ") + e.what());
    }
    loss.gamma = g;
  } else if (key == "gamma") {
    loss.gamma = to_double(key, value);
    if (!(loss.gamma > 0.0)) throw ConfigError("gamma must be positive");
  } else if (key == "threshold") {
    if (lower(value) == "auto") {
      threshold.reset();
    } else {
      threshold = parse_threshold(value);
    }
  } else if (key == "methods") {
    methods.clear();
    for (auto f : list_items(value)) {
      const Method m = parse_method(lower(f));
      if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    }
  } else if (key == "seed") {
    seed = to_u64(key, value);
  } else if (key == "out") {
    out = std::string(value);
  } else if (key == "workers") {
    workers = static_cast<unsigned>(to_size(key, value));
  } else if (key == "level") {
    level = to_double(key, value);
  } else if (key == "coords") {
    coords.clear();
    for (auto f : list_items(value)) coords.push_back(to_size(key, f));
  } else if (key == "repeats") {
    repeats = to_size(key, value);
  } else if (key == "population_term") {
    population_term = to_bool(key, value);
  } else if (key == "rule") {
    const std::string s = lower(value);
    if (s == "lopt") {
      rule = RuleKind::LOpt;
    } else if (s == "aopt") {
      rule = RuleKind::AOpt;
    } else {
      throw ConfigError("rule must be lopt or aopt");
    }
  } else if (key == "truncate") {
    truncate = to_bool(key, value);
  } else if (key == "theta_cache") {
    theta_cache = std::string(value);
  } else if (key == "rows") {
    rows = std::string(value);
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

inline void ExperimentConfig::validate() const {
  if (case_id < 1 || case_id > 6) throw ConfigError("case must be 1..6");
  if (d < 2) throw ConfigError("d must be at least 2");
  if (r_list.empty()) throw ConfigError("r_list is empty");
  if (methods.empty()) throw ConfigError("methods is empty");
  if (r0 < 10 * d) throw ConfigError("r0 must be at least 10*d = " + std::to_string(10 * d));
  for (auto r : r_list) {
    if (r < 1) throw ConfigError("r_list entries must be positive");
    if (r0 + r >= n) throw ConfigError("r0 + r must be below n (r = " + std::to_string(r) + ")");
  }
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0, 1)");
  for (auto c : coords) {
    if (c >= d) throw ConfigError("coordinate " + std::to_string(c) + " is out of range");
  }
  if (loss.kind == LossKind::Dwd && !(loss.gamma > 0.0)) throw ConfigError("gamma must be positive");
}

/// Flat `key = value` text; '#' starts a comment. Keys apply on top of `base`.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view v(line);
    if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
    v = detail::trim(v);
    if (v.empty()) continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    try {
      base.set(v.substr(0, eq), v.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, std::move(base));
}

// ---------------------------------------------------------------------------
// Reference parameter

inline std::string theta_cache_key(const ExperimentConfig& cfg) {
  std::ostringstream k;
  k << "case=" << cfg.case_id << ";d=" << cfg.d << ";n=" << cfg.n << ";seed=" << cfg.seed
    << ";loss=" << to_string(cfg.loss.kind) << ";gamma=" << cfg.loss.gamma;
  return k.str();
}

/// Known closed form when available, else the 10n full-data fit, cached in a
/// text file as `key<TAB>v0,v1,...` lines.
inline Vector resolve_reference_theta(const ExperimentConfig& cfg, bool use_cache = true) {
  const CaseSpec spec{cfg.case_id, cfg.n, cfg.d, derive_seed(cfg.seed, "theta_t")};
  if (auto t = known_theta(spec, cfg.loss)) return *t;
  const std::string key = theta_cache_key(cfg);
  const std::string path = cfg.theta_cache_path();
  if (use_cache) {
    std::ifstream in(path);
    std::string line;
    while (in && std::getline(in, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos || line.compare(0, tab, key) != 0 || tab != key.size()) continue;
      const auto items = detail::split_commas(std::string_view(line).substr(tab + 1));
      if (items.size() != cfg.d) continue;
      Vector t(static_cast<Eigen::Index>(cfg.d));
      bool ok = true;
      for (std::size_t j = 0; j < items.size(); ++j) ok = ok && detail::parse_double(detail::trim(items[j]), t(static_cast<Eigen::Index>(j)));
      if (ok) return t;
    }
  }
  const Vector t = reference_theta(spec, cfg.loss, cfg.solver);
  if (use_cache) {
    std::ofstream o(path, std::ios::app);
    if (o) {
      o << key << '\t';
      char buf[32];
      for (Eigen::Index j = 0; j < t.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", t(j));
        o << (j ? "," : "") << buf;
      }
      o << '\n';
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// One fit

struct FitOutcome {
  Vector theta;
  std::vector<double> length;           // per coordinate, from the reported covariance
  std::vector<double> length_sampling;  // per coordinate, sampling-only covariance
  std::vector<Interval> intervals;
  std::size_t realized_r = 0;
  bool converged = false;
};

inline double normal_quantile(double level) {
  return boost::math::quantile(boost::math::normal(), 0.5 * (1.0 + level));
}

namespace detail {

inline void fill_lengths(FitOutcome& f, const Matrix& cov, const Matrix& sampling, double level) {
  if (cov.size() == 0) return;
  const double z = normal_quantile(level);
  for (Eigen::Index j = 0; j < cov.rows(); ++j) {
    f.length.push_back(2.0 * z * std::sqrt(std::max(cov(j, j), 0.0)));
    f.length_sampling.push_back(2.0 * z * std::sqrt(std::max(sampling(j, j), 0.0)));
  }
}

}  // namespace detail

/// Runs one method on `table`. The pilot is the first r0 rows; MROSS and OSMAC
/// scan the rest, UNIF scans every row with budget r0 + r, FULL fits all rows.
/// `pilot` is fitted here when null.
inline FitOutcome fit_method(Method method, const ExperimentConfig& cfg, const std::shared_ptr<const PointTable>& table,
                             const PilotFit* pilot, std::size_t r, CounterRng& rng, bool covariance) {
  const std::size_t n = table->size();
  FitOutcome f;
  if (method == Method::Full) {
    MemoryStream all(table);
    f.theta = fit_stream(cfg.loss, all, Vector::Zero(static_cast<Eigen::Index>(table->dim())), cfg.solver).theta;
    const SolveReport rep = fit_stream(cfg.loss, all, f.theta, cfg.solver);
    f.theta = rep.theta;
    f.converged = rep.converged;
    f.realized_r = n;
    return f;
  }
  if (method == Method::Unif) {
    MemoryStream all(table);
    BaselineOptions o{cfg.solver, cfg.level, cfg.population_term, covariance};
    const BaselineEstimate e = unif_fit(all, static_cast<double>(cfg.r0 + r), cfg.loss, rng, n, o);
    f.theta = e.theta;
    f.converged = e.report.converged;
    f.realized_r = e.realized_r;
    f.intervals = e.intervals;
    detail::fill_lengths(f, e.covariance, e.sampling_covariance, cfg.level);
    return f;
  }
  std::optional<PilotFit> own;
  if (pilot == nullptr) {
    own = fit_pilot(cfg.loss, table->points(0, cfg.r0), cfg.solver);
    pilot = &*own;
  }
  MemoryStream rest(table, cfg.r0);
  if (method == Method::Osmac) {
    BaselineOptions o{cfg.solver, cfg.level, cfg.population_term, covariance};
    const BaselineEstimate e = osmac_fit(rest, *pilot, static_cast<double>(r), cfg.loss, rng, n - cfg.r0, o);
    f.theta = e.theta;
    f.converged = e.report.converged;
    f.realized_r = e.realized_r;
    f.intervals = e.intervals;
    detail::fill_lengths(f, e.covariance, e.sampling_covariance, cfg.level);
    return f;
  }
  MrossConfig mc;
  mc.rule = cfg.rule;
  mc.budget_r = static_cast<double>(r);
  mc.threshold = cfg.threshold_policy();
  mc.truncate = cfg.truncate;
  mc.options.population_term = cfg.population_term;
  mc.options.level = cfg.level;
  mc.options.covariance = covariance;
  mc.options.solver = cfg.solver;
  const MrossEstimate e = mross_fit(rest, *pilot, mc, rng, n - cfg.r0);
  f.theta = e.theta;
  f.converged = e.report.converged;
  f.realized_r = e.diagnostics.realized_r;
  f.intervals = e.intervals;
  detail::fill_lengths(f, e.covariance, e.sampling_covariance, cfg.level);
  return f;
}

// ---------------------------------------------------------------------------
// Replications

struct ResultRow {
  Method method = Method::Mross;
  std::size_t r = 0;  // 0 for the full-data fit
  std::size_t replicate = 0;
  bool ok = false;
  std::string error;
  double mse_contrib = 0.0;  // ||theta_hat - theta_t||^2
  double wall_time_s = 0.0;
  std::size_t realized_r = 0;
  std::vector<int> covered;  // per tracked coordinate
  std::vector<double> length;
  std::vector<double> length_sampling;
};

inline std::uint64_t replicate_seed(std::uint64_t master, Method m, std::size_t r, std::size_t rep) {
  return derive_seed(master, to_string(m), {static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(rep)});
}

inline std::shared_ptr<const PointTable> replicate_data(const ExperimentConfig& cfg, std::size_t rep) {
  SyntheticStream gen(CaseSpec{cfg.case_id, cfg.n, cfg.d, derive_seed(cfg.seed, "data", {rep})});
  return std::make_shared<const PointTable>(materialize_table(gen));
}

/// Every (method, r) cell of replicate `rep`. Failures become flagged rows.
inline std::vector<ResultRow> run_replicate(const ExperimentConfig& cfg, const Vector& theta_t, std::size_t rep,
                                            bool covariance) {
  std::vector<ResultRow> rows;
  auto blank = [&](Method m, std::size_t r) {
    ResultRow row;
    row.method = m;
    row.r = r;
    row.replicate = rep;
    return row;
  };
  auto flag_all = [&](const std::string& why) {
    for (Method m : cfg.methods) {
      for (auto r : m == Method::Full ? std::vector<std::size_t>{0} : cfg.r_list) {
        rows.push_back(blank(m, r));
        rows.back().error = why;
      }
    }
  };
  std::shared_ptr<const PointTable> table;
  try {
    table = replicate_data(cfg, rep);
  } catch (const std::exception& e) {
    flag_all(std::string("data: ") + e.what());
    return rows;
  }
  std::optional<PilotFit> pilot;
  std::string pilot_error;
  try {
    pilot = fit_pilot(cfg.loss, table->points(0, cfg.r0), cfg.solver);
  } catch (const std::exception& e) {
    pilot_error = std::string("pilot: ") + e.what();
  }
  auto run_cell = [&](Method m, std::size_t r) {
    ResultRow row = blank(m, r);
    const bool needs_pilot = m == Method::Osmac || m == Method::Mross;
    if (needs_pilot && !pilot) {
      row.error = pilot_error;
      rows.push_back(std::move(row));
      return;
    }
    CounterRng rng(replicate_seed(cfg.seed, m, r, rep));
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const FitOutcome f = fit_method(m, cfg, table, pilot ? &*pilot : nullptr, r, rng, covariance);
      row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      row.realized_r = f.realized_r;
      if (!f.converged || !f.theta.allFinite()) {
        row.error = "solver did not converge";
      } else {
        row.ok = true;
        row.mse_contrib = (f.theta - theta_t).squaredNorm();
        if (!f.intervals.empty()) {
          for (auto c : cfg.coords) {
            const auto [lo, hi] = f.intervals[c];
            row.covered.push_back(lo <= theta_t(static_cast<Eigen::Index>(c)) &&
                                  theta_t(static_cast<Eigen::Index>(c)) <= hi);
            row.length.push_back(f.length[c]);
            row.length_sampling.push_back(f.length_sampling[c]);
          }
        }
      }
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  };
  for (auto r : cfg.r_list) {
    for (Method m : cfg.methods) {
      if (m != Method::Full) run_cell(m, r);
    }
  }
  if (std::find(cfg.methods.begin(), cfg.methods.end(), Method::Full) != cfg.methods.end()) run_cell(Method::Full, 0);
  return rows;
}

inline unsigned resolve_workers(unsigned requested, std::size_t jobs) {
  unsigned w = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(w, std::max<std::size_t>(jobs, 1)));
}

/// All replicates on a bounded pool; rows come back ordered by replicate, so
/// the result does not depend on scheduling.
inline std::vector<ResultRow> run_replications(const ExperimentConfig& cfg, const Vector& theta_t, bool covariance) {
  std::vector<std::vector<ResultRow>> per(cfg.S);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t rep; (rep = next.fetch_add(1)) < cfg.S;) per[rep] = run_replicate(cfg, theta_t, rep, covariance);
  };
  const unsigned w = resolve_workers(cfg.workers, cfg.S);
  if (w <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < w; ++i) pool.emplace_back(work);
  }
  std::vector<ResultRow> rows;
  for (auto& v : per) {
    for (auto& row : v) rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Aggregation

struct MseRow {
  Method method;
  std::size_t r;
  std::size_t s_ok;
  std::size_t s_failed;
  double mse;
  double sd;  // standard deviation of the per-replicate contributions
};

struct CoverageRow {
  Method method;
  std::size_t r;
  std::size_t coord;
  std::size_t s_ok;
  double cp;
  double mean_length;
  double mean_length_sampling;
};

struct TimingRow {
  Method method;
  std::size_t r;
  std::size_t repeats;
  double mean_s;
  double sd_s;
};

namespace detail {

inline std::vector<std::pair<Method, std::size_t>> cells(const ExperimentConfig& cfg) {
  std::vector<std::pair<Method, std::size_t>> out;
  for (Method m : cfg.methods) {
    if (m == Method::Full) continue;
    for (auto r : cfg.r_list) out.emplace_back(m, r);
  }
  for (Method m : cfg.methods) {
    if (m == Method::Full) out.emplace_back(m, 0);
  }
  return out;
}

inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

inline std::vector<MseRow> aggregate_mse(const ExperimentConfig& cfg, const std::vector<ResultRow>& rows) {
  std::vector<MseRow> out;
  if (cfg.S == 0) return out;
  for (auto [m, r] : detail::cells(cfg)) {
    std::vector<double> v;
    std::size_t failed = 0;
    for (const auto& row : rows) {
      if (row.method != m || row.r != r) continue;
      if (row.ok) {
        v.push_back(row.mse_contrib);
      } else {
        ++failed;
      }
    }
    double mean = 0.0;
    for (double x : v) mean += x;
    mean = v.empty() ? std::nan("") : mean / static_cast<double>(v.size());
    out.push_back({m, r, v.size(), failed, mean, detail::sample_sd(v)});
  }
  return out;
}

inline std::vector<CoverageRow> aggregate_coverage(const ExperimentConfig& cfg, const std::vector<ResultRow>& rows) {
  std::vector<CoverageRow> out;
  if (cfg.S == 0) return out;
  for (auto [m, r] : detail::cells(cfg)) {
    if (m == Method::Full) continue;
    for (std::size_t k = 0; k < cfg.coords.size(); ++k) {
      std::size_t ok = 0, hit = 0;
      double len = 0.0, len_s = 0.0;
      for (const auto& row : rows) {
        if (row.method != m || row.r != r || !row.ok || row.covered.size() <= k) continue;
        ++ok;
        hit += static_cast<std::size_t>(row.covered[k]);
        len += row.length[k];
        len_s += row.length_sampling[k];
      }
      const double den = ok ? static_cast<double>(ok) : std::nan("");
      out.push_back({m, r, cfg.coords[k], ok, static_cast<double>(hit) / den, len / den, len_s / den});
    }
  }
  return out;
}

inline std::vector<MseRow> run_mse(const ExperimentConfig& cfg, std::vector<ResultRow>* rows_out = nullptr) {
  cfg.validate();
  if (cfg.S == 0) return {};
  const Vector theta_t = resolve_reference_theta(cfg);
  std::vector<ResultRow> rows = run_replications(cfg, theta_t, false);
  auto table = aggregate_mse(cfg, rows);
  if (rows_out) *rows_out = std::move(rows);
  return table;
}

inline std::vector<CoverageRow> run_coverage(const ExperimentConfig& cfg, std::vector<ResultRow>* rows_out = nullptr) {
  cfg.validate();
  if (cfg.S == 0) return {};
  const Vector theta_t = resolve_reference_theta(cfg);
  std::vector<ResultRow> rows = run_replications(cfg, theta_t, true);
  auto table = aggregate_coverage(cfg, rows);
  if (rows_out) *rows_out = std::move(rows);
  return table;
}

/// Sequential wall-clock per end-to-end fit (pilot fit, scan and solve; no
/// covariance) on one dataset, methods interleaved within each repeat after
/// one untimed warm-up round. Data generation is not timed.
inline std::vector<TimingRow> run_timing(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<TimingRow> out;
  if (cfg.S == 0 || cfg.repeats == 0) return out;
  const auto table = replicate_data(cfg, 0);
  std::map<std::pair<Method, std::size_t>, std::vector<double>> times;
  auto once = [&](Method m, std::size_t r, std::size_t rep) {
    CounterRng rng(replicate_seed(cfg.seed, m, r, rep));
    const auto t0 = std::chrono::steady_clock::now();
    const FitOutcome f = fit_method(m, cfg, table, nullptr, r, rng, false);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!f.theta.allFinite()) throw std::runtime_error("timing run produced a non-finite estimate");
    return dt;
  };
  const auto cs = detail::cells(cfg);
  for (auto [m, r] : cs) once(m, r, cfg.repeats);  // warm-up
  for (std::size_t i = 0; i < cfg.repeats; ++i) {
    for (auto [m, r] : cs) times[{m, r}].push_back(once(m, r, i));
  }
  for (auto [m, r] : cs) {
    const auto& v = times[{m, r}];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    out.push_back({m, r, v.size(), mean, detail::sample_sd(v)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string num(double x) {
  if (std::isnan(x)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace detail

inline constexpr std::string_view kMseHeader = "method,r,S_ok,S_failed,mse,sd";
inline constexpr std::string_view kCoverageHeader = "method,r,coord,S_ok,cp,mean_length,mean_length_sampling";
inline constexpr std::string_view kTimingHeader = "method,r,repeats,mean_s,sd_s";
inline constexpr std::string_view kRowsHeader =
    "method,r,replicate,ok,mse_contrib,wall_time_s,realized_r,covered,length,error";

inline void write_csv(std::ostream& o, const std::vector<MseRow>& t) {
  o << kMseHeader << '\n';
  for (const auto& x : t) {
    o << to_string(x.method) << ',' << x.r << ',' << x.s_ok << ',' << x.s_failed << ',' << detail::num(x.mse) << ','
      << detail::num(x.sd) << '\n';
  }
}

inline void write_csv(std::ostream& o, const std::vector<CoverageRow>& t) {
  o << kCoverageHeader << '\n';
  for (const auto& x : t) {
    o << to_string(x.method) << ',' << x.r << ',' << x.coord << ',' << x.s_ok << ',' << detail::num(x.cp) << ','
      << detail::num(x.mean_length) << ',' << detail::num(x.mean_length_sampling) << '\n';
  }
}

inline void write_csv(std::ostream& o, const std::vector<TimingRow>& t) {
  o << kTimingHeader << '\n';
  for (const auto& x : t) {
    o << to_string(x.method) << ',' << x.r << ',' << x.repeats << ',' << detail::num(x.mean_s) << ','
      << detail::num(x.sd_s) << '\n';
  }
}

/// Per-replicate rows; `covered` and `length` are ';'-joined per coordinate.
/// Wall time makes this file run-dependent, unlike the aggregate tables.
inline void write_csv(std::ostream& o, const std::vector<ResultRow>& rows) {
  o << kRowsHeader << '\n';
  for (const auto& x : rows) {
    std::string cov, len;
    for (std::size_t k = 0; k < x.covered.size(); ++k) {
      cov += (k ? ";" : "") + std::to_string(x.covered[k]);
      len += (k ? ";" : "") + detail::num(x.length[k]);
    }
    std::string err = x.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    o << to_string(x.method) << ',' << x.r << ',' << x.replicate << ',' << (x.ok ? 1 : 0) << ','
      << detail::num(x.mse_contrib) << ',' << detail::num(x.wall_time_s) << ',' << x.realized_r << ',' << cov << ','
      << len << ',' << err << '\n';
  }
}

template <class Table>
void write_csv_file(const std::string& path, const Table& t) {
  std::ofstream o(path);
  if (!o) throw std::runtime_error("cannot open output file '" + path + "'");
  write_csv(o, t);
}

}  // namespace mross::bench
