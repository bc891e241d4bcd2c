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

// Full-data Z-estimation over a replayable stream, and the reference parameter
// used as ground truth by the simulation harness.

#include <optional>

#include "mross/data.hpp"
#include "mross/solver.hpp"

namespace mross {

/// Root of (1/n) sum_i phi'(y_i x_i'theta) y_i x_i over every point of the
/// stream. Each Newton evaluation is one traversal; nothing is stored.
inline SolveReport fit_stream(const LossSpec& loss, DatasetStream& stream, const Vector& init,
                              const SolverOptions& opt = {}) {
  const auto d = static_cast<Eigen::Index>(stream.dim());
  if (init.size() != d) throw std::invalid_argument("fit_stream: init dimension mismatch");
  Vector cached_at;
  Matrix cached_jac;
  LossSpec cur = loss;
  auto pass = [&](const Vector& theta, Vector& score, Matrix& jac) {
    stream.reset();
    score = Vector::Zero(d);
    jac = Matrix::Zero(d, d);
    LabeledPoint p;
    std::size_t n = 0;
    while (stream.next(p)) {
      const double z = margin(theta, p);
      score.noalias() += (eval_dloss(cur, z) * p.y) * p.x;
      const double c = eval_ddloss(cur, z);
      if (c != 0.0) jac.selfadjointView<Eigen::Lower>().rankUpdate(p.x, c);
      ++n;
    }
    if (n == 0) throw std::invalid_argument("fit_stream: empty stream");
    score /= static_cast<double>(n);
    jac = Matrix(jac.selfadjointView<Eigen::Lower>()) / static_cast<double>(n);
  };
  auto score_fn = [&](const Vector& theta) {
    Vector s;
    pass(theta, s, cached_jac);
    cached_at = theta;
    return s;
  };
  auto jac_fn = [&](const Vector& theta) {
    if (cached_at.size() != theta.size() || cached_at != theta) {
      Vector s;
      pass(theta, s, cached_jac);
      cached_at = theta;
    }
    return cached_jac;
  };
  auto run = [&](const LossSpec& l, const Vector& start) {
    cur = l;
    cached_at.resize(0);
    return solve_score(score_fn, jac_fn, start, opt);
  };
  return run(loss, detail::warm_start(loss, init, run));
}

/// The generating parameter when it is known in closed form: the logistic
/// designs 1-3 fitted with the logistic loss.
inline std::optional<Vector> known_theta(const CaseSpec& spec, const LossSpec& loss) {
  if (loss.kind == LossKind::Logistic && spec.case_id >= 1 && spec.case_id <= 3) {
    return logistic_design_theta(spec.d);
  }
  return std::nullopt;
}

/// Full-data M-estimator on an independent dataset of size 10 n.
inline Vector reference_theta(const CaseSpec& spec, const LossSpec& loss, const SolverOptions& opt = {}) {
  spec.validate();
  CaseSpec big = spec;
  big.n = 10 * spec.n;
  big.seed = derive_seed(spec.seed, "reference");
  SyntheticStream stream(big);
  const SolveReport rep = fit_stream(loss, stream, Vector::Zero(spec.d), opt);
  if (!rep.converged) {
    throw std::runtime_error("reference fit did not converge (score norm " +
                             std::to_string(rep.final_score_norm) + ")");
  }
  return rep.theta;
}

}  // namespace mross
