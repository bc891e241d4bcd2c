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

// Damped Newton root finding for score (Z-) equations, weighted M-estimation
// on in-memory samples, and the pilot fit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mross/loss.hpp"

namespace mross {

class SingularSystem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SolverOptions {
  double tol = 1e-8;  // infinity norm of the score
  int max_iter = 100;
  int max_halvings = 30;
  double cond_limit = 1e12;
};

struct SolveReport {
  Vector theta;
  int iterations = 0;
  double final_score_norm = 0.0;  // infinity norm
  bool converged = false;
  bool diverging = false;  // iterates run away (e.g. separable data)
};

using ScoreFn = std::function<Vector(const Vector&)>;
using JacobianFn = std::function<Matrix(const Vector&)>;

namespace detail {

/// Solve J step = rhs, adding a ridge of 1e-8 * |trace(J)| / d when J is
/// numerically singular or its condition number exceeds `cond_limit`.
inline Vector regularized_solve(const Matrix& jac, const Vector& rhs, double cond_limit) {
  const auto d = jac.rows();
  if (!jac.allFinite()) throw SingularSystem("Jacobian has non-finite entries");
  double scale = std::abs(jac.trace()) / static_cast<double>(d);

  // Symmetric Jacobians (every loss here) use |eigenvalues| as singular values.
  const double asym = (jac - jac.transpose()).cwiseAbs().maxCoeff();
  if (asym <= 1e-12 * std::max(jac.cwiseAbs().maxCoeff(), 1e-300)) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (jac + jac.transpose()));
    Vector lam = eig.eigenvalues();
    const double smax = lam.cwiseAbs().maxCoeff();
    const double smin = lam.cwiseAbs().minCoeff();
    if (!(smin > 0.0 && smax / smin <= cond_limit)) {
      if (!(scale > 0.0)) scale = smax;
      if (!(scale > 0.0)) throw SingularSystem("Jacobian is identically zero");
      lam.array() += 1e-8 * scale;
      if (!(lam.cwiseAbs().minCoeff() > 0.0)) throw SingularSystem("Jacobian singular after regularization");
    }
    const auto& v = eig.eigenvectors();
    return v * (v.transpose() * rhs).cwiseQuotient(lam);
  }

  Eigen::JacobiSVD<Matrix> svd(jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(d - 1);
  if (smin > 0.0 && smax / smin <= cond_limit) return svd.solve(rhs);

  if (!(scale > 0.0)) scale = smax;
  if (!(scale > 0.0)) throw SingularSystem("Jacobian is identically zero");
  Matrix reg = jac;
  reg.diagonal().array() += 1e-8 * scale;
  Eigen::JacobiSVD<Matrix> svd_reg(reg, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (!(svd_reg.singularValues()(d - 1) > 0.0)) {
    throw SingularSystem("Jacobian singular after regularization");
  }
  return svd_reg.solve(rhs);
}

inline double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace detail

/// Newton iteration theta <- theta - J^{-1} s with step halving until the
/// Euclidean score norm does not increase. Convergence requires the score
/// infinity norm at most `tol` and a negligible Newton step (measured with the
/// latest Jacobian), so runaway iterates on separable data are reported as
/// non-converged.
inline SolveReport solve_score(const ScoreFn& score_fn, const JacobianFn& jacobian_fn,
                               const Vector& init, const SolverOptions& opt = {}) {
  if (!(opt.tol > 0.0)) throw std::invalid_argument("solver tolerance must be positive");
  SolveReport rep;
  rep.theta = init;
  Vector s = score_fn(rep.theta);
  if (s.size() != init.size()) throw std::invalid_argument("score dimension does not match init");
  if (!s.allFinite()) throw std::domain_error("score is not finite at the initial point");
  double norm2 = s.norm();

  std::vector<double> theta_norms{rep.theta.norm()};
  double last_step = 0.0;
  Matrix jac;
  // Converged: the remaining Newton step is kept when it does not raise the
  // score norm, so the returned root is accurate well below the step test.
  auto finish = [&](const Vector& step) {
    rep.converged = true;
    const Vector cand = rep.theta - step;
    Vector s_cand = score_fn(cand);
    if (s_cand.allFinite() && s_cand.norm() <= norm2) {
      rep.theta = cand;
      s = std::move(s_cand);
    }
  };
  for (int it = 0; it < opt.max_iter; ++it) {
    const bool small_score = detail::inf_norm(s) <= opt.tol;
    // Once the score is small, the previous Jacobian usually suffices to
    // confirm that the Newton step is negligible.
    if (small_score && jac.size() > 0) {
      const Vector chord = detail::regularized_solve(jac, s, opt.cond_limit);
      if (detail::inf_norm(chord) <= 1e-6 * (1.0 + detail::inf_norm(rep.theta))) {
        finish(chord);
        break;
      }
    }
    jac = jacobian_fn(rep.theta);
    const Vector step = detail::regularized_solve(jac, s, opt.cond_limit);
    const double step_inf = detail::inf_norm(step);
    if (small_score && step_inf <= 1e-6 * (1.0 + detail::inf_norm(rep.theta))) {
      finish(step);
      break;
    }
    double t = 1.0;
    bool accepted = false;
    Vector cand;
    Vector s_cand;
    for (int h = 0; h <= opt.max_halvings; ++h, t *= 0.5) {
      cand = rep.theta - t * step;
      s_cand = score_fn(cand);
      if (s_cand.allFinite() && s_cand.norm() <= norm2) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    rep.theta = std::move(cand);
    s = std::move(s_cand);
    norm2 = s.norm();
    last_step = t * step_inf;
    ++rep.iterations;
    theta_norms.push_back(rep.theta.norm());
  }
  rep.final_score_norm = detail::inf_norm(s);
  if (!rep.converged) {
    // Runaway: the iterate norm grew on each of the last five accepted steps
    // and the steps are not shrinking.
    const std::size_t k = theta_norms.size();
    bool growing = k > 5;
    for (std::size_t i = k > 5 ? k - 5 : 0; growing && i < k; ++i) {
      growing = theta_norms[i] > theta_norms[i - 1];
    }
    rep.diverging = growing && last_step > 1e-3 * (1.0 + detail::inf_norm(rep.theta));
  }
  return rep;
}

namespace detail {

/// At theta = 0 every DWD margin lies on the linear branch, where the
/// Jacobian vanishes. For the losses other than logistic a zero start is
/// replaced by the logistic root (when it converges).
template <class Run>
Vector warm_start(const LossSpec& loss, const Vector& init, Run&& run) {
  if (loss.kind == LossKind::Logistic || !init.isZero(0.0)) return init;
  const SolveReport warm = run(LossSpec::logistic(), init);
  return warm.converged ? warm.theta : init;
}

}  // namespace detail

/// Points with non-negative weights, e.g. inverse inclusion probabilities.
struct WeightedSample {
  std::vector<LabeledPoint> points;
  std::vector<double> weights;

  void validate() const {
    if (points.size() != weights.size()) {
      throw std::invalid_argument("weighted sample: points and weights differ in length");
    }
    bool any_positive = false;
    for (double w : weights) {
      if (!std::isfinite(w) || w < 0.0) {
        throw std::invalid_argument("weighted sample: weights must be finite and non-negative");
      }
      any_positive = any_positive || w > 0.0;
    }
    if (!any_positive) throw std::invalid_argument("weighted sample: all weights are zero");
  }
};

inline Vector weighted_score(const LossSpec& loss, const WeightedSample& sample, const Vector& theta) {
  Vector s = Vector::Zero(theta.size());
  for (std::size_t i = 0; i < sample.points.size(); ++i) {
    const auto& p = sample.points[i];
    const double z = margin(theta, p);
    s.noalias() += (sample.weights[i] * eval_dloss(loss, z) * p.y) * p.x;
  }
  return s;
}

inline Matrix weighted_jacobian(const LossSpec& loss, const WeightedSample& sample, const Vector& theta) {
  Matrix j = Matrix::Zero(theta.size(), theta.size());
  for (std::size_t i = 0; i < sample.points.size(); ++i) {
    const auto& p = sample.points[i];
    const double c = sample.weights[i] * eval_ddloss(loss, margin(theta, p));
    if (c != 0.0) j.selfadjointView<Eigen::Lower>().rankUpdate(p.x, c);
  }
  return j.selfadjointView<Eigen::Lower>();
}

/// Column-per-point design with labels and weights of either sign.
struct PointBlock {
  Matrix x;  // d x m
  Vector y;
  Vector w;

  Eigen::Index size() const { return x.cols(); }
  Eigen::Index dim() const { return x.rows(); }

  void resize(Eigen::Index d, Eigen::Index m) {
    x.resize(d, m);
    y.resize(m);
    w.resize(m);
  }
  void set(Eigen::Index j, const Vector& xj, double yj, double wj) {
    x.col(j) = xj;
    y(j) = yj;
    w(j) = wj;
  }
};

inline PointBlock make_block(const std::vector<LabeledPoint>& points, const std::vector<double>& weights) {
  if (points.size() != weights.size()) throw std::invalid_argument("block: points and weights differ in length");
  PointBlock b;
  if (points.empty()) return b;
  b.resize(points.front().x.size(), static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].x.size() != b.dim()) throw std::invalid_argument("block: dimension mismatch");
    b.set(static_cast<Eigen::Index>(i), points[i].x, points[i].y, weights[i]);
  }
  return b;
}

/// A diag(w) A', filling one triangle and mirroring it.
inline Matrix weighted_outer(const Matrix& a, const Vector& w) {
  const Matrix aw = a * w.asDiagonal();
  Matrix out(a.rows(), a.rows());
  out.triangularView<Eigen::Lower>() = aw * a.transpose();
  return out.selfadjointView<Eigen::Lower>();
}

/// sum_j w_j phi'(y_j x_j'theta) y_j x_j.
inline Vector block_score(const LossSpec& loss, const PointBlock& b, const Vector& theta) {
  Vector c = (b.x.transpose() * theta).cwiseProduct(b.y);
  for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = b.w(j) * eval_dloss(loss, c(j)) * b.y(j);
  return b.x * c;
}

/// sum_j w_j phi''(y_j x_j'theta) x_j x_j'.
inline Matrix block_jacobian(const LossSpec& loss, const PointBlock& b, const Vector& theta) {
  Vector c = (b.x.transpose() * theta).cwiseProduct(b.y);
  for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = b.w(j) * eval_ddloss(loss, c(j));
  return weighted_outer(b.x, c);
}

/// Root of sum_i w_i phi'(y_i x_i'theta) y_i x_i with the analytic Jacobian.
inline SolveReport fit_weighted(const LossSpec& loss, const WeightedSample& sample, const Vector& init,
                                const SolverOptions& opt = {}) {
  sample.validate();
  for (const auto& p : sample.points) {
    if (p.x.size() != init.size()) throw std::invalid_argument("weighted sample: dimension mismatch");
  }
  const PointBlock b = make_block(sample.points, sample.weights);
  auto run = [&](const LossSpec& l, const Vector& start) {
    return solve_score([&](const Vector& th) { return block_score(l, b, th); },
                       [&](const Vector& th) { return block_jacobian(l, b, th); }, start, opt);
  };
  return run(loss, detail::warm_start(loss, init, run));
}

struct PilotFit {
  LossSpec loss;
  Vector theta;
  Matrix hessian;  // (1/r0) sum phi''(y x'theta) x x', ridged to be positive definite
  std::vector<LabeledPoint> points;
  SolveReport report;

  std::size_t r0() const { return points.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(theta.size()); }
};

/// Unweighted fit on the pilot sample. Requires at least 10 * d points.
inline PilotFit fit_pilot(const LossSpec& loss, std::vector<LabeledPoint> pilot_points,
                          const SolverOptions& opt = {}) {
  if (pilot_points.empty()) throw std::invalid_argument("pilot sample is empty");
  const auto d = pilot_points.front().x.size();
  const auto r0 = pilot_points.size();
  if (r0 < 10 * static_cast<std::size_t>(d)) {
    throw std::invalid_argument("pilot size " + std::to_string(r0) + " is below 10*d = " +
                                std::to_string(10 * d));
  }
  WeightedSample sample{std::move(pilot_points), std::vector<double>(r0, 1.0)};
  PilotFit fit;
  fit.loss = loss;
  fit.report = fit_weighted(loss, sample, Vector::Zero(d), opt);
  if (!fit.report.converged) {
    throw std::runtime_error("pilot fit did not converge (score norm " +
                             std::to_string(fit.report.final_score_norm) +
                             "); use a larger pilot sample");
  }
  fit.theta = fit.report.theta;
  fit.hessian = weighted_jacobian(loss, sample, fit.theta) / static_cast<double>(r0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(fit.hessian, Eigen::EigenvaluesOnly);
  const double scale = std::max(fit.hessian.trace() / static_cast<double>(d), 1e-300);
  if (eig.eigenvalues()(0) <= 1e-12 * scale) fit.hessian.diagonal().array() += 1e-8 * scale;
  fit.points = std::move(sample.points);
  return fit;
}

}  // namespace mross
