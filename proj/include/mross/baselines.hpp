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

// Reference competitors sharing the sampler and solver: uniform Poisson
// subsampling (UNIF) and L-optimal IPW subsampling over the whole stream (OSMAC).

#include <string_view>

#include "mross/mross.hpp"
#include "mross/sampler.hpp"
#include "mross/solver.hpp"

namespace mross {

enum class BaselineMethod { Unif, Osmac };

inline std::string_view to_string(BaselineMethod m) { return m == BaselineMethod::Unif ? "unif" : "osmac"; }

struct BaselineEstimate {
  BaselineMethod method = BaselineMethod::Unif;
  Vector theta;
  Matrix covariance;  // IPW sandwich
  Matrix sampling_covariance;
  std::vector<Interval> intervals;
  SolveReport report;
  std::size_t realized_r = 0;
  double pi_sum = 0.0;
};

struct BaselineOptions {
  SolverOptions solver;
  double level = 0.95;
  bool population_term = false;
  bool covariance = true;
};

namespace detail {

inline MrossOptions sandwich_options(const BaselineOptions& b) {
  MrossOptions o;
  o.rb_correction = false;
  o.use_centroids = false;
  o.combine_pilot = false;
  o.population_term = b.population_term;
  o.level = b.level;
  o.covariance = b.covariance;
  o.solver = b.solver;
  return o;
}

inline BaselineEstimate fit_ipw_subsample(BaselineMethod method, const LossSpec& loss, const ScanSummary& summary,
                                          const PilotFit& pilot_like, const Vector& init, const MrossOptions& o) {
  if (summary.subsample.empty()) throw std::runtime_error(std::string(to_string(method)) + ": empty subsample");
  WeightedSample sample;
  sample.points.reserve(summary.subsample.size());
  sample.weights.reserve(summary.subsample.size());
  for (const auto& sp : summary.subsample) {
    sample.points.push_back(sp.point);
    sample.weights.push_back(ipw_weight(summary, sp));
  }
  BaselineEstimate est;
  est.method = method;
  est.report = fit_weighted(loss, sample, init, o.solver);
  est.theta = est.report.theta;
  const ProjectionBasis basis{loss, pilot_like.theta, BasisKind::ConstantOnly};
  if (o.covariance) {
    VarianceParts v = plugin_variance_parts(est.theta, pilot_like, summary, basis, o);
    est.sampling_covariance = v.sampling;
    est.covariance = o.population_term ? std::move(v.total) : std::move(v.sampling);
    est.intervals = confidence_intervals(est.theta, est.covariance, o.level);
  }
  est.realized_r = summary.realized_r();
  est.pi_sum = summary.pi_sum;
  return est;
}

}  // namespace detail

/// Poisson subsampling with constant pi = min(budget / n, 1) over the next n
/// points of the stream; the fit is unweighted (constant weights cancel).
template <class Rng>
BaselineEstimate unif_fit(DatasetStream& stream, double budget, const LossSpec& loss, Rng& rng, std::size_t n,
                          const BaselineOptions& opt = {}) {
  if (budget > static_cast<double>(n)) throw std::invalid_argument("unif: budget exceeds the data size");
  PilotFit flat;
  flat.loss = loss;
  flat.theta = Vector::Zero(static_cast<Eigen::Index>(stream.dim()));
  InclusionRule rule{RuleKind::Uniform, budget, kNoThreshold, std::nullopt, false};
  const SamplingPlan plan = make_plan_with_normalizer(flat, rule, loss, static_cast<double>(n));
  const ProjectionBasis basis{loss, flat.theta, BasisKind::ConstantOnly};
  const ScanSummary summary = scan(stream, plan, basis, rng);
  return detail::fit_ipw_subsample(BaselineMethod::Unif, loss, summary, flat, flat.theta,
                                   detail::sandwich_options(opt));
}

template <class Rng>
BaselineEstimate unif_fit(DatasetStream& stream, double budget, const LossSpec& loss, Rng& rng) {
  return unif_fit(stream, budget, loss, rng, stream.size_hint());
}

/// L-optimal probabilities over every remaining point (no region partition),
/// with the pilot-based normalizer, and the IPW estimator started at the pilot.
template <class Rng>
BaselineEstimate osmac_fit(DatasetStream& stream, const PilotFit& pilot, double budget, const LossSpec& loss,
                           Rng& rng, std::size_t n, const BaselineOptions& opt = {}) {
  InclusionRule rule{RuleKind::LOpt, budget, kNoThreshold, std::nullopt, false};
  const SamplingPlan plan = make_plan(pilot, rule, loss, n);
  const ProjectionBasis basis{loss, pilot.theta, BasisKind::ConstantOnly};
  const ScanSummary summary = scan(stream, plan, basis, rng);
  return detail::fit_ipw_subsample(BaselineMethod::Osmac, loss, summary, pilot, pilot.theta,
                                   detail::sandwich_options(opt));
}

template <class Rng>
BaselineEstimate osmac_fit(DatasetStream& stream, const PilotFit& pilot, double budget, const LossSpec& loss,
                           Rng& rng) {
  return osmac_fit(stream, pilot, budget, loss, rng, stream.size_hint());
}

}  // namespace mross
