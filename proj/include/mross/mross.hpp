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

// Multi-resolution estimation: the Rao-Blackwellized region-S score, the
// centroid summary of the two confident regions, the combined estimating
// equation with the pilot sample, and the plug-in covariance.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "mross/loss.hpp"
#include "mross/projection.hpp"
#include "mross/sampler.hpp"
#include "mross/solver.hpp"

namespace mross {

// ---------------------------------------------------------------------------
// Threshold policies for C

enum class ThresholdKind {
  None,       // C = infinity: no confident regions
  Fixed,      // C = value
  EtaLevel,   // C is the link value at which the fitted P(Y=1|x) equals `value`
  LogRate,    // C = value * (log r0 - log log r0)   (logistic)
  PowerRate,  // C = value * r0^(1/4 - exponent)     (DWD)
};

struct ThresholdPolicy {
  ThresholdKind kind = ThresholdKind::EtaLevel;
  double value = 0.99;
  double exponent = 0.125;

  static ThresholdPolicy none() { return {ThresholdKind::None, 0.0, 0.0}; }
  static ThresholdPolicy fixed(double c) { return {ThresholdKind::Fixed, c, 0.0}; }
  static ThresholdPolicy eta_level(double eta) { return {ThresholdKind::EtaLevel, eta, 0.0}; }
};

/// Link value a*(eta) minimizing eta phi(a) + (1 - eta) phi(-a), eta > 1/2.
inline double optimal_link(const LossSpec& loss, double eta) {
  if (!(eta > 0.5 && eta < 1.0)) throw std::invalid_argument("eta level must lie in (0.5, 1)");
  const double odds = eta / (1.0 - eta);
  switch (loss.kind) {
    case LossKind::Logistic: return std::log(odds);
    case LossKind::Dwd: return loss.gamma * std::sqrt(odds);
    case LossKind::SquaredHinge: return 2.0 * eta - 1.0;
  }
  return 0.0;
}

inline double resolve_threshold(const ThresholdPolicy& policy, const LossSpec& loss, std::size_t r0) {
  const double r = static_cast<double>(r0);
  double c = 0.0;
  switch (policy.kind) {
    case ThresholdKind::None: return kNoThreshold;
    case ThresholdKind::Fixed: c = policy.value; break;
    case ThresholdKind::EtaLevel: c = optimal_link(loss, policy.value); break;
    case ThresholdKind::LogRate:
      if (r0 < 3) throw std::invalid_argument("log-rate threshold needs r0 >= 3");
      c = policy.value * (std::log(r) - std::log(std::log(r)));
      break;
    case ThresholdKind::PowerRate: c = policy.value * std::pow(r, 0.25 - policy.exponent); break;
  }
  if (!(c > 0.0)) throw std::invalid_argument("threshold policy produced a non-positive C");
  return c;
}

// ---------------------------------------------------------------------------
// Region-S Rao-Blackwellization

/// Per-selected-point multipliers 1 - (sum a g - (n_s/n) gbar)' G^{-1} g_i,
/// with a_i = 1 / (n pi_i) and G = sum a g g' (ridged by 1e-10 trace / d_g).
struct RbCorrection {
  std::vector<double> factor;
  Vector coef;         // G^{-1} (sum a g - (n_s/n) gbar)
  bool fallback = false;  // singular Gram: plain IPW weights were used
};

namespace detail {

inline double ipw_weight(const ScanSummary& s, const SampledPoint& sp) {
  return 1.0 / (static_cast<double>(s.n_total) * sp.pi);
}

/// Subsample as a block with w_j = a_j = 1 / (n pi_j).
inline PointBlock subsample_block(const ScanSummary& summary) {
  PointBlock b;
  const auto m = static_cast<Eigen::Index>(summary.subsample.size());
  if (m == 0) return b;
  b.resize(summary.subsample.front().point.x.size(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& sp = summary.subsample[static_cast<std::size_t>(j)];
    b.set(j, sp.point.x, sp.point.y, ipw_weight(summary, sp));
  }
  return b;
}

/// Features g of every block column, d_g x m.
inline Matrix basis_matrix(const ProjectionBasis& basis, const PointBlock& b) {
  const auto m = b.size();
  Matrix g(static_cast<Eigen::Index>(basis.dim()), m);
  g.row(0).setOnes();
  if (basis.kind == BasisKind::ConstantOnly) return g;
  g.row(1) = b.y.transpose();
  Vector c = (b.x.transpose() * basis.theta_pilot).cwiseProduct(b.y);
  for (Eigen::Index j = 0; j < m; ++j) c(j) = eval_dloss(basis.loss, c(j)) * b.y(j);
  g.bottomRows(b.dim()) = b.x * c.asDiagonal();
  return g;
}

// Rank check on the unridged Gram; the ridge only stabilizes the solve.
inline bool gram_is_regular(const Matrix& gram) {
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success) return false;
  const auto& diag = ldlt.vectorD();
  return diag.minCoeff() > 1e-12 * diag.cwiseAbs().maxCoeff();
}

inline void add_ridge(Matrix& gram) {
  gram.diagonal().array() += 1e-10 * gram.trace() / static_cast<double>(gram.rows());
}

inline RbCorrection rb_from(const ScanSummary& summary, const Matrix& g, const Vector& a) {
  if (summary.gbar.size() != g.rows()) {
    throw std::invalid_argument("summary g-mean does not match the projection basis");
  }
  RbCorrection rb;
  Matrix gram = weighted_outer(g, a);
  if (!gram_is_regular(gram)) {
    rb.fallback = true;
    rb.coef = Vector::Zero(gram.rows());
    rb.factor.assign(static_cast<std::size_t>(g.cols()), 1.0);
    return rb;
  }
  add_ridge(gram);
  const Vector target = static_cast<double>(summary.n_s) / static_cast<double>(summary.n_total) * summary.gbar;
  Eigen::LDLT<Matrix> ldlt(gram);
  rb.coef = ldlt.solve(g * a - target);
  const Vector f = Vector::Ones(g.cols()) - g.transpose() * rb.coef;
  rb.factor.assign(f.data(), f.data() + f.size());
  return rb;
}

}  // namespace detail

inline RbCorrection rb_correction(const ScanSummary& summary, const ProjectionBasis& basis) {
  if (summary.subsample.empty()) throw std::invalid_argument("RB correction needs a nonempty subsample");
  const PointBlock b = detail::subsample_block(summary);
  return detail::rb_from(summary, detail::basis_matrix(basis, b), b.w);
}

namespace detail {

inline Vector corrected_score(const Vector& theta, const ScanSummary& summary, const LossSpec& loss,
                              const std::vector<double>& factor) {
  PointBlock b = subsample_block(summary);
  if (b.size() == 0) return Vector::Zero(theta.size());
  b.w.array() *= Eigen::Map<const Vector>(factor.data(), b.size()).array();
  return block_score(loss, b, theta);
}

}  // namespace detail

/// Sum over selected region-S points of the RB multiplier times
/// delta_i / (n pi_i) phi'(y x'theta) y x. Falls back to plain IPW when the
/// Gram matrix is singular; check rb_correction(...).fallback for the flag.
inline Vector rb_region_score(const Vector& theta, const ScanSummary& summary, const ProjectionBasis& basis) {
  const RbCorrection rb = rb_correction(summary, basis);
  return detail::corrected_score(theta, summary, basis.loss, rb.factor);
}

/// Plain IPW score of the subsample: sum delta_i / (n pi_i) Psi_i(theta).
inline Vector ipw_region_score(const Vector& theta, const ScanSummary& summary, const LossSpec& loss) {
  return detail::corrected_score(theta, summary, loss, std::vector<double>(summary.subsample.size(), 1.0));
}

/// (n+/n) phi'(xbar+'theta) xbar+ - (n-/n) phi'(-xbar-'theta) xbar-.
inline Vector centroid_score(const Vector& theta, const ScanSummary& summary, const LossSpec& loss) {
  Vector s = Vector::Zero(theta.size());
  if (summary.n_total == 0) return s;
  const double n = static_cast<double>(summary.n_total);
  if (summary.n_plus > 0) {
    s += (static_cast<double>(summary.n_plus) / n) * eval_dloss(loss, summary.xbar_plus.dot(theta)) * summary.xbar_plus;
  }
  if (summary.n_minus > 0) {
    s -= (static_cast<double>(summary.n_minus) / n) * eval_dloss(loss, -summary.xbar_minus.dot(theta)) *
         summary.xbar_minus;
  }
  return s;
}

inline Matrix centroid_jacobian(const Vector& theta, const ScanSummary& summary, const LossSpec& loss) {
  Matrix j = Matrix::Zero(theta.size(), theta.size());
  if (summary.n_total == 0) return j;
  const double n = static_cast<double>(summary.n_total);
  if (summary.n_plus > 0) {
    j += (static_cast<double>(summary.n_plus) / n) * eval_ddloss(loss, summary.xbar_plus.dot(theta)) *
         (summary.xbar_plus * summary.xbar_plus.transpose());
  }
  if (summary.n_minus > 0) {
    j += (static_cast<double>(summary.n_minus) / n) * eval_ddloss(loss, -summary.xbar_minus.dot(theta)) *
         (summary.xbar_minus * summary.xbar_minus.transpose());
  }
  return j;
}

// ---------------------------------------------------------------------------
// Combined estimating equation

struct MrossOptions {
  bool rb_correction = true;
  bool use_centroids = true;
  bool combine_pilot = true;
  /// Adds the full-data sampling variance (1/n) E[Psi Psi'] to the plug-in
  /// covariance. The plug-in without it is the r/n -> 0 limit.
  bool population_term = false;
  double level = 0.95;
  bool covariance = true;  // false: point estimate only
  SolverOptions solver;
};

namespace detail {

/// Subsample columns (weight scale * factor_j * a_j), then pilot columns
/// (1/(n+r0)), then the two centroids (scale * n+-/n, labels +1 and -1).
/// A centroid column reproduces its term of centroid_score exactly.
inline PointBlock combined_block(const PilotFit& pilot, const ScanSummary& summary, const std::vector<double>& factor,
                                 const MrossOptions& opt) {
  const double n = static_cast<double>(summary.n_total);
  const double r0 = opt.combine_pilot ? static_cast<double>(pilot.r0()) : 0.0;
  const double scale = n / (n + r0);
  const auto m = static_cast<Eigen::Index>(summary.subsample.size());
  const auto np = opt.combine_pilot ? static_cast<Eigen::Index>(pilot.r0()) : 0;
  const bool plus = opt.use_centroids && summary.n_plus > 0;
  const bool minus = opt.use_centroids && summary.n_minus > 0;
  PointBlock b;
  b.resize(pilot.theta.size(), m + np + plus + minus);
  Eigen::Index j = 0;
  for (; j < m; ++j) {
    const auto& sp = summary.subsample[static_cast<std::size_t>(j)];
    b.set(j, sp.point.x, sp.point.y, scale * factor[static_cast<std::size_t>(j)] * ipw_weight(summary, sp));
  }
  for (Eigen::Index i = 0; i < np; ++i, ++j) {
    const auto& p = pilot.points[static_cast<std::size_t>(i)];
    b.set(j, p.x, p.y, 1.0 / (n + r0));
  }
  if (plus) b.set(j++, summary.xbar_plus, 1.0, scale * static_cast<double>(summary.n_plus) / n);
  if (minus) b.set(j++, summary.xbar_minus, -1.0, scale * static_cast<double>(summary.n_minus) / n);
  return b;
}

}  // namespace detail

/// The pieces of the combined equation that do not depend on theta.
class CombinedEquation {
 public:
  CombinedEquation(const PilotFit& pilot, const ScanSummary& summary, const ProjectionBasis& basis,
                   const MrossOptions& opt = {})
      : loss_(basis.loss) {
    if (summary.n_total == 0) throw std::invalid_argument("combined equation: the scan saw no data");
    if (summary.subsample.empty()) throw std::invalid_argument("combined equation: empty subsample");
    sub_ = detail::subsample_block(summary);
    if (opt.rb_correction) {
      g_ = detail::basis_matrix(basis, sub_);
      rb_ = detail::rb_from(summary, g_, sub_.w);
    } else {
      rb_.factor.assign(summary.subsample.size(), 1.0);
      rb_.coef = Vector::Zero(static_cast<Eigen::Index>(basis.dim()));
    }
    block_ = detail::combined_block(pilot, summary, rb_.factor, opt);
  }

  /// (1/(n+r0)) sum_pilot Psi + (n/(n+r0)) [RB region score + centroid score].
  Vector score(const Vector& theta) const { return block_score(loss_, block_, theta); }
  Matrix jacobian(const Vector& theta) const { return block_jacobian(loss_, block_, theta); }

  const RbCorrection& rb() const { return rb_; }
  const PointBlock& block() const { return block_; }
  const PointBlock& subsample() const { return sub_; }  // w = 1 / (n pi)
  const Matrix& features() const { return g_; }        // empty without RB

 private:
  LossSpec loss_;
  RbCorrection rb_;
  PointBlock sub_;
  Matrix g_;
  PointBlock block_;
};

inline Vector combined_score(const Vector& theta, const PilotFit& pilot, const ScanSummary& summary,
                             const ProjectionBasis& basis, const MrossOptions& opt = {}) {
  return CombinedEquation(pilot, summary, basis, opt).score(theta);
}

// ---------------------------------------------------------------------------
// Inference

using Interval = std::pair<double, double>;

/// theta_j -/+ z_{(1+level)/2} sqrt(V_jj).
inline std::vector<Interval> confidence_intervals(const Vector& theta, const Matrix& covariance, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must lie in (0, 1)");
  if (covariance.rows() != theta.size() || covariance.cols() != theta.size()) {
    throw std::invalid_argument("covariance dimension does not match theta");
  }
  const double z = boost::math::quantile(boost::math::normal(), 0.5 * (1.0 + level));
  std::vector<Interval> out;
  out.reserve(static_cast<std::size_t>(theta.size()));
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double v = covariance(j, j);
    if (!(v >= 0.0)) throw std::domain_error("covariance has a negative diagonal entry (not PSD)");
    const double half = z * std::sqrt(v);
    out.emplace_back(theta(j) - half, theta(j) + half);
  }
  return out;
}

namespace detail {

inline Matrix symmetrize_psd(const Matrix& m) {
  Matrix s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  if (eig.eigenvalues().minCoeff() >= 0.0) return s;
  const Vector clipped = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
}

inline Matrix invert_spd(const Matrix& h, const char* what) {
  Eigen::LDLT<Matrix> ldlt(h);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0)) {
    throw SingularSystem(std::string(what) + " is singular");
  }
  return ldlt.solve(Matrix::Identity(h.rows(), h.cols()));
}

}  // namespace detail

struct VarianceParts {
  Matrix sampling;  // conditional on the full data
  Matrix total;     // sampling plus the population term
};

/// Sandwich H^{-1} V_c H^{-1} at theta.
///   H   : pilot + IPW-subsample (+ centroid) Hessian estimate,
///   V_c : (1/n^2) sum_selected aleph aleph' / pi^2 with
///         aleph_i = Psi_i(theta) - B' g_i and B the IPW least-squares
///         projection of Psi on g over the subsample (B = 0 without RB).
namespace detail {

/// `b` is the subsample block with w = a; `g` its feature matrix (used only
/// with RB).
inline VarianceParts plugin_variance_from(const Vector& theta, const PilotFit& pilot, const ScanSummary& summary,
                                          const LossSpec& loss, const PointBlock& b, const Matrix& g,
                                          const MrossOptions& opt) {
  const double n = static_cast<double>(summary.n_total);
  const double r0 = opt.combine_pilot ? static_cast<double>(pilot.r0()) : 0.0;

  const Matrix hess = block_jacobian(
      loss, combined_block(pilot, summary, std::vector<double>(summary.subsample.size(), 1.0), opt), theta);

  Vector c = (b.x.transpose() * theta).cwiseProduct(b.y);
  for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = eval_dloss(loss, c(j)) * b.y(j);
  const Matrix psi = b.x * c.asDiagonal();  // d x m
  Matrix meat;
  Matrix pop;
  if (opt.rb_correction) {
    // One pass for sum a [g; Psi][g; Psi]', which holds the Gram, the
    // cross moment and the population term.
    const auto dg = g.rows();
    const auto d = psi.rows();
    Matrix stacked(dg + d, psi.cols());
    stacked.topRows(dg) = g;
    stacked.bottomRows(d) = psi;
    Matrix mom = weighted_outer(stacked, b.w);
    pop = mom.bottomRightCorner(d, d) / n;
    Matrix gram = mom.topLeftCorner(dg, dg);
    Matrix aleph = psi;
    if (gram_is_regular(gram)) {
      add_ridge(gram);
      const Matrix coef = gram.ldlt().solve(mom.topRightCorner(dg, d));
      aleph.noalias() -= coef.transpose() * g;
    }
    meat = weighted_outer(aleph, b.w.cwiseAbs2());
  } else {
    meat = weighted_outer(psi, b.w.cwiseAbs2());
    pop = weighted_outer(psi, b.w) / n;
  }
  const double scale = (n / (n + r0)) * (n / (n + r0));
  const Matrix h_inv = invert_spd(hess, "plug-in Hessian");
  return {symmetrize_psd(h_inv * (scale * meat) * h_inv),
          symmetrize_psd(h_inv * (scale * (meat + pop)) * h_inv)};
}

}  // namespace detail

inline VarianceParts plugin_variance_parts(const Vector& theta, const PilotFit& pilot, const ScanSummary& summary,
                                           const ProjectionBasis& basis, const MrossOptions& opt = {}) {
  if (summary.subsample.empty()) throw std::invalid_argument("plugin variance needs a nonempty subsample");
  const PointBlock b = detail::subsample_block(summary);
  const Matrix g = opt.rb_correction ? detail::basis_matrix(basis, b) : Matrix();
  return detail::plugin_variance_from(theta, pilot, summary, basis.loss, b, g, opt);
}

inline Matrix plugin_variance(const Vector& theta, const PilotFit& pilot, const ScanSummary& summary,
                              const ProjectionBasis& basis, const MrossOptions& opt = {}) {
  VarianceParts v = plugin_variance_parts(theta, pilot, summary, basis, opt);
  return opt.population_term ? std::move(v.total) : std::move(v.sampling);
}

struct MrossDiagnostics {
  std::size_t n_plus = 0;
  std::size_t n_minus = 0;
  std::size_t n_s = 0;
  std::size_t realized_r = 0;
  double pi_sum = 0.0;
  double normalizer = 0.0;
  bool rb_fallback = false;
};

struct MrossEstimate {
  Vector theta;
  Matrix covariance;           // sampling-only, or total under population_term
  Matrix sampling_covariance;  // always sampling-only
  std::vector<Interval> intervals;
  double level = 0.95;
  SolveReport report;
  MrossDiagnostics diagnostics;
};

/// Newton root of the combined equation started at the pilot estimate, with
/// plug-in covariance and intervals at `opt.level`.
inline MrossEstimate solve_mross(const PilotFit& pilot, const ScanSummary& summary, const ProjectionBasis& basis,
                                 const MrossOptions& opt = {}) {
  const CombinedEquation eq(pilot, summary, basis, opt);
  MrossEstimate est;
  est.report = solve_score([&](const Vector& th) { return eq.score(th); },
                           [&](const Vector& th) { return eq.jacobian(th); }, pilot.theta, opt.solver);
  est.theta = est.report.theta;
  est.level = opt.level;
  if (opt.covariance) {
    VarianceParts v =
        detail::plugin_variance_from(est.theta, pilot, summary, basis.loss, eq.subsample(), eq.features(), opt);
    est.sampling_covariance = v.sampling;
    est.covariance = opt.population_term ? std::move(v.total) : std::move(v.sampling);
    est.intervals = confidence_intervals(est.theta, est.covariance, opt.level);
  }
  est.diagnostics = {summary.n_plus, summary.n_minus, summary.n_s, summary.realized_r(),
                     summary.pi_sum, summary.normalizer, eq.rb().fallback};
  return est;
}

/// End-to-end settings for one multi-resolution fit after the pilot.
struct MrossConfig {
  RuleKind rule = RuleKind::LOpt;
  double budget_r = 1000.0;
  ThresholdPolicy threshold;
  bool truncate = false;
  BasisKind basis = BasisKind::LinearScore;
  MrossOptions options;
};

/// Scans the next n points of `stream` and solves the combined equation.
template <class Rng>
MrossEstimate mross_fit(DatasetStream& stream, const PilotFit& pilot, const MrossConfig& cfg, Rng& rng,
                        std::size_t n) {
  InclusionRule rule{cfg.rule, cfg.budget_r, resolve_threshold(cfg.threshold, pilot.loss, pilot.r0()),
                     std::nullopt, cfg.truncate};
  const SamplingPlan plan = make_plan(pilot, rule, pilot.loss, n);
  const ProjectionBasis basis = ProjectionBasis::from_pilot(pilot, cfg.basis);
  const ScanSummary summary = scan(stream, plan, basis, rng);
  return solve_mross(pilot, summary, basis, cfg.options);
}

}  // namespace mross
