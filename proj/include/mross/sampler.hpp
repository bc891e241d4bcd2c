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

// The single pass of multi-resolution subsampling: region assignment against
// the pilot linear score, optimal Poisson inclusion probabilities on the
// uncertain region, Bernoulli draws, and running summaries of everything that
// is not kept.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mross/data.hpp"
#include "mross/projection.hpp"
#include "mross/rng.hpp"
#include "mross/solver.hpp"

namespace mross {

inline constexpr double kNoThreshold = std::numeric_limits<double>::infinity();

enum class RuleKind { Uniform, LOpt, AOpt };

struct InclusionRule {
  RuleKind kind = RuleKind::LOpt;
  double budget_r = 1.0;
  double threshold_C = kNoThreshold;
  std::optional<double> truncation_M;
  bool auto_truncate = false;  // M := 95th percentile of pilot region-S weights

  void validate() const {
    if (!(budget_r >= 1.0)) throw std::invalid_argument("inclusion rule: budget must be at least 1");
    if (!(threshold_C > 0.0)) throw std::invalid_argument("inclusion rule: threshold C must be positive");
    if (truncation_M && !(*truncation_M > 0.0)) {
      throw std::invalid_argument("inclusion rule: truncation M must be positive");
    }
  }
};

enum class RegionTag { Plus, Minus, S };

/// Plus: x'theta > C with y = +1; Minus: x'theta < -C with y = -1; S otherwise.
inline RegionTag classify_region(double linear_score, int y, double threshold_C) {
  if (linear_score > threshold_C && y == 1) return RegionTag::Plus;
  if (linear_score < -threshold_C && y == -1) return RegionTag::Minus;
  return RegionTag::S;
}

inline RegionTag classify_region(const PilotFit& pilot, double threshold_C, const LabeledPoint& p) {
  if (!(threshold_C > 0.0)) throw std::invalid_argument("classify_region: C must be positive");
  return classify_region(p.x.dot(pilot.theta), p.y, threshold_C);
}

/// Everything the per-point probability needs, resolved once before the pass.
class WeightModel {
 public:
  WeightModel(const InclusionRule& rule, const LossSpec& loss, const PilotFit& pilot)
      : kind_(rule.kind), loss_(loss), theta_(pilot.theta), cap_(rule.truncation_M) {
    if (kind_ == RuleKind::AOpt) {
      Eigen::LDLT<Matrix> ldlt(pilot.hessian);
      if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0)) {
        throw SingularSystem("A-optimal weights need a positive definite pilot Hessian");
      }
      h_inv_ = ldlt.solve(Matrix::Identity(pilot.hessian.rows(), pilot.hessian.cols()));
    }
  }

  /// Un-truncated weight given the pilot derivative phi'(y x'theta_pilot).
  double raw(const LabeledPoint& p, double dphi) const {
    switch (kind_) {
      case RuleKind::Uniform: return 1.0;
      case RuleKind::LOpt: return std::abs(dphi) * p.x.norm();
      case RuleKind::AOpt: return std::abs(dphi) * (h_inv_ * p.x).norm();
    }
    return 0.0;
  }

  double operator()(const LabeledPoint& p, double dphi) const {
    const double w = raw(p, dphi);
    return cap_ ? std::min(w, *cap_) : w;
  }

  double operator()(const LabeledPoint& p) const { return (*this)(p, dphi(p)); }

  /// ||x|| (L-opt) or ||H^{-1} x|| (A-opt) for every column of x; untouched
  /// for the uniform rule.
  template <class X>
  void column_norms(const X& x, Vector& out) const {
    if (kind_ == RuleKind::LOpt) out.head(x.cols()) = x.colwise().norm().transpose();
    if (kind_ == RuleKind::AOpt) out.head(x.cols()) = (h_inv_ * x).colwise().norm().transpose();
  }

  /// Capped weight from the derivative and the matching column norm.
  double from_norm(double dphi, double norm) const {
    const double w = kind_ == RuleKind::Uniform ? 1.0 : std::abs(dphi) * norm;
    return cap_ ? std::min(w, *cap_) : w;
  }

  RuleKind kind() const { return kind_; }

  double dphi(const LabeledPoint& p) const { return eval_dloss(loss_, margin(theta_, p)); }

  const Vector& theta() const { return theta_; }
  const LossSpec& loss() const { return loss_; }
  std::optional<double> cap() const { return cap_; }
  void set_cap(std::optional<double> m) { cap_ = m; }

 private:
  RuleKind kind_;
  LossSpec loss_;
  Vector theta_;
  Matrix h_inv_;
  std::optional<double> cap_;
};

/// Weight for a point of region S: |phi'| ||x|| (L-opt), |phi'| ||H^{-1} x||
/// (A-opt) or 1 (uniform), capped at M when truncation is set.
inline double sampling_weight(const InclusionRule& rule, const LossSpec& loss, const PilotFit& pilot,
                              const LabeledPoint& p) {
  return WeightModel(rule, loss, pilot)(p);
}

inline double inclusion_probability(const InclusionRule& rule, double weight, double normalizer) {
  if (!(normalizer > 0.0)) throw std::invalid_argument("inclusion probability: normalizer must be positive");
  return std::min(rule.budget_r * weight / normalizer, 1.0);
}

/// n times the pilot mean of weight * 1(region S): a one-pass stand-in for the
/// full-data sum of region-S weights.
inline double estimate_normalizer(const PilotFit& pilot, const InclusionRule& rule, const LossSpec& loss,
                                  std::size_t n) {
  if (pilot.points.empty()) throw std::invalid_argument("estimate_normalizer: pilot sample is empty");
  const WeightModel model(rule, loss, pilot);
  double total = 0.0;
  std::size_t in_s = 0;
  for (const auto& p : pilot.points) {
    if (classify_region(p.x.dot(pilot.theta), p.y, rule.threshold_C) != RegionTag::S) continue;
    total += model(p);
    ++in_s;
  }
  if (in_s == 0 || !(total > 0.0)) {
    throw std::runtime_error("no pilot point with positive weight falls in region S; "
                             "increase the threshold C or the pilot size");
  }
  return static_cast<double>(n) * total / static_cast<double>(pilot.points.size());
}

/// Exact sum of region-S weights over a full traversal (a second pass).
inline double exact_normalizer(DatasetStream& stream, const PilotFit& pilot, const InclusionRule& rule,
                               const LossSpec& loss) {
  const WeightModel model(rule, loss, pilot);
  stream.reset();
  LabeledPoint p;
  double total = 0.0;
  while (stream.next(p)) {
    if (classify_region(p.x.dot(pilot.theta), p.y, rule.threshold_C) == RegionTag::S) total += model(p);
  }
  return total;
}

/// 95th percentile of the pilot region-S weights.
inline double pilot_weight_quantile(const PilotFit& pilot, const InclusionRule& rule, const LossSpec& loss,
                                    double level = 0.95) {
  InclusionRule untruncated = rule;
  untruncated.truncation_M.reset();
  const WeightModel model(untruncated, loss, pilot);
  std::vector<double> w;
  for (const auto& p : pilot.points)
    if (classify_region(p.x.dot(pilot.theta), p.y, rule.threshold_C) == RegionTag::S) w.push_back(model(p));
  if (w.empty()) throw std::runtime_error("no pilot point in region S to estimate the truncation constant");
  const auto k = static_cast<std::size_t>(std::ceil(level * static_cast<double>(w.size()))) - 1;
  std::nth_element(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(k), w.end());
  return w[k];
}

struct SamplingPlan {
  InclusionRule rule;
  WeightModel weights;
  double normalizer;

  double probability(double weight) const { return inclusion_probability(rule, weight, normalizer); }
};

/// Resolves truncation and the pilot-based normalizer for a pass over n points.
inline SamplingPlan make_plan(const PilotFit& pilot, InclusionRule rule, const LossSpec& loss, std::size_t n) {
  rule.validate();
  if (rule.auto_truncate && !rule.truncation_M) rule.truncation_M = pilot_weight_quantile(pilot, rule, loss);
  const double normalizer =
      rule.kind == RuleKind::Uniform && rule.threshold_C == kNoThreshold
          ? static_cast<double>(n)
          : estimate_normalizer(pilot, rule, loss, n);
  return {rule, WeightModel(rule, loss, pilot), normalizer};
}

/// Plan with a caller-supplied normalizer (e.g. the exact full-data sum).
inline SamplingPlan make_plan_with_normalizer(const PilotFit& pilot, InclusionRule rule, const LossSpec& loss,
                                              double normalizer) {
  rule.validate();
  if (rule.auto_truncate && !rule.truncation_M) rule.truncation_M = pilot_weight_quantile(pilot, rule, loss);
  if (!(normalizer > 0.0)) throw std::invalid_argument("normalizer must be positive");
  return {rule, WeightModel(rule, loss, pilot), normalizer};
}

struct SampledPoint {
  LabeledPoint point;
  double pi = 1.0;
};

struct ScanSummary {
  Vector xbar_plus;
  std::size_t n_plus = 0;
  Vector xbar_minus;
  std::size_t n_minus = 0;
  Vector gbar;  // mean of g over region-S points (selected or not)
  std::size_t n_s = 0;
  std::size_t n_total = 0;
  std::vector<SampledPoint> subsample;
  double pi_sum = 0.0;      // realized sum of inclusion probabilities over region S
  double normalizer = 0.0;  // the value used for the draws

  std::size_t realized_r() const { return subsample.size(); }
};

/// Points per block in scan(); small enough for the block to stay in cache.
inline constexpr Eigen::Index kScanChunk = 256;

/// One pass over the remainder of `stream`, block by block. Only selected
/// points are stored. Draws happen in stream order, one per region-S point.
template <class Rng>
ScanSummary scan(DatasetStream& stream, const SamplingPlan& plan, const ProjectionBasis& basis, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(stream.dim());
  if (d != plan.weights.theta().size()) throw std::invalid_argument("scan: stream dimension differs from pilot");
  const double threshold = plan.rule.threshold_C;
  const LossSpec& loss = plan.weights.loss();
  ScanSummary out;
  out.xbar_plus = Vector::Zero(d);
  out.xbar_minus = Vector::Zero(d);
  out.gbar = Vector::Zero(static_cast<Eigen::Index>(basis.dim()));
  out.normalizer = plan.normalizer;
  // Plain sums, divided once at the end.
  Vector sum_plus = Vector::Zero(d);
  Vector sum_minus = Vector::Zero(d);
  Vector sum_score = Vector::Zero(d);
  double sum_y = 0.0;
  const bool linear = basis.kind == BasisKind::LinearScore;
  const Vector& theta = plan.weights.theta();
  const bool shared_theta = !linear || (basis.theta_pilot.size() == d && basis.theta_pilot == theta &&
                                        basis.loss.kind == loss.kind && basis.loss.gamma == loss.gamma);

  Vector t(kScanChunk), tg(kScanChunk), norms(kScanChunk), c(kScanChunk);
  ChunkView ch;
  Eigen::Index m;
  while ((m = stream.next_chunk(kScanChunk, ch)) > 0) {
    const auto x = ch.features();
    t.head(m).noalias() = x.transpose() * theta;
    plan.weights.column_norms(x, norms);
    if (linear) {
      if (!shared_theta) tg.head(m).noalias() = x.transpose() * basis.theta_pilot;
      c.head(m).setZero();
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      const int y = ch.y[j];
      switch (classify_region(t(j), y, threshold)) {
        case RegionTag::Plus:
          ++out.n_plus;
          sum_plus += x.col(j);
          break;
        case RegionTag::Minus:
          ++out.n_minus;
          sum_minus += x.col(j);
          break;
        case RegionTag::S: {
          ++out.n_s;
          const double dphi = eval_dloss(loss, y * t(j));
          if (linear) {
            sum_y += y;
            c(j) = (shared_theta ? dphi : eval_dloss(basis.loss, y * tg(j))) * y;
          }
          const double pi = plan.probability(plan.weights.from_norm(dphi, norms(j)));
          out.pi_sum += pi;
          if (rng.uniform() < pi) out.subsample.push_back({ch.point(j), pi});
          break;
        }
      }
    }
    if (linear) sum_score.noalias() += x * c.head(m);
    out.n_total += static_cast<std::size_t>(m);
  }
  if (out.n_plus > 0) out.xbar_plus = sum_plus / static_cast<double>(out.n_plus);
  if (out.n_minus > 0) out.xbar_minus = sum_minus / static_cast<double>(out.n_minus);
  if (out.n_s > 0) {
    const double ns = static_cast<double>(out.n_s);
    out.gbar(0) = 1.0;
    if (linear) {
      out.gbar(1) = sum_y / ns;
      out.gbar.tail(d) = sum_score / ns;
    }
  }
  return out;
}

/// Convenience form: plan from the pilot normalizer for a fresh stream.
template <class Rng>
ScanSummary scan(DatasetStream& stream, const PilotFit& pilot, const InclusionRule& rule, const LossSpec& loss,
                 const ProjectionBasis& basis, Rng& rng) {
  return scan(stream, make_plan(pilot, rule, loss, stream.size_hint()), basis, rng);
}

// ---------------------------------------------------------------------------
// Binary spill: one row per selected point, d + 2 little-endian float64
// values (x_0..x_{d-1}, y, pi), no header.

namespace detail {

inline void write_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

inline bool read_le(std::istream& in, double& v) {
  std::uint64_t bits;
  if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) return false;
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  v = std::bit_cast<double>(bits);
  return true;
}

}  // namespace detail

inline void write_spill(const std::string& path, const std::vector<SampledPoint>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open spill file '" + path + "'");
  for (const auto& r : rows) {
    for (Eigen::Index j = 0; j < r.point.x.size(); ++j) detail::write_le(out, r.point.x(j));
    detail::write_le(out, static_cast<double>(r.point.y));
    detail::write_le(out, r.pi);
  }
}

inline std::vector<SampledPoint> read_spill(const std::string& path, std::size_t d) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open spill file '" + path + "'");
  std::vector<SampledPoint> rows;
  for (;;) {
    SampledPoint r;
    r.point.x.resize(static_cast<Eigen::Index>(d));
    double v;
    if (!detail::read_le(in, v)) break;
    r.point.x(0) = v;
    for (std::size_t j = 1; j < d; ++j)
      if (!detail::read_le(in, r.point.x(static_cast<Eigen::Index>(j)))) throw std::runtime_error("truncated spill row");
    double y, pi;
    if (!detail::read_le(in, y) || !detail::read_le(in, pi)) throw std::runtime_error("truncated spill row");
    r.point.y = y > 0 ? 1 : -1;
    r.pi = pi;
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mross
