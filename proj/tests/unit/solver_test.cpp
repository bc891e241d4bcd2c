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

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mross/data.hpp"
#include "mross/solver.hpp"
#include "support/invariants.hpp"
#include "support/oracles.hpp"

namespace {

using namespace mross;

LabeledPoint pt(double a, double b, int y) { return {(Vector(2) << a, b).finished(), y}; }

std::vector<LabeledPoint> symmetric_four() {
  return {pt(1, 1, 1), pt(1, -1, 1), pt(1, -1, -1), pt(1, 1, -1)};
}

// Positives at both ends, negatives in the middle: no separating line.
std::vector<LabeledPoint> asymmetric_four() { return {pt(1, 1, 1), pt(1, -1, -1), pt(1, 0.5, -1), pt(1, -2, 1)}; }

SolveReport unweighted(const LossSpec& loss, const std::vector<LabeledPoint>& pts) {
  return fit_weighted(loss, WeightedSample{pts, std::vector<double>(pts.size(), 1.0)}, Vector::Zero(2));
}

TEST(SolveScore, SymmetricDataGivesZero) {
  const SolveReport r = unweighted(LossSpec::logistic(), symmetric_four());
  ASSERT_TRUE(r.converged);
  EXPECT_LE(r.theta.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(r.final_score_norm, 1e-8);
}

TEST(SolveScore, MatchesGridMinimizer) {
  const auto pts = asymmetric_four();
  const SolveReport r = unweighted(LossSpec::logistic(), pts);
  ASSERT_TRUE(r.converged);
  const Vector grid = mross_test::oracle_grid_2d(LossSpec::logistic(), pts, -3.0, 3.0, 1e-4);
  EXPECT_LE((r.theta - grid).cwiseAbs().maxCoeff(), 2e-4) << r.theta.transpose() << " vs " << grid.transpose();
}

TEST(SolveScore, SeparableDataIsFlaggedAsDiverging) {
  const SolveReport r = unweighted(LossSpec::logistic(), {pt(1, 1, 1), pt(1, -1, -1)});
  EXPECT_FALSE(r.converged);
  EXPECT_TRUE(r.diverging);
}

TEST(SolveScore, QuadraticConvergesInOneStep) {
  Matrix a(2, 2);
  a << 3, 1, 1, 2;
  const Vector b = (Vector(2) << 1, -1).finished();
  const SolveReport r = solve_score([&](const Vector& t) { return Vector(a * t - b); },
                                    [&](const Vector&) { return a; }, Vector::Zero(2));
  ASSERT_TRUE(r.converged);
  EXPECT_LE((r.theta - a.ldlt().solve(b)).norm(), 1e-14);
  EXPECT_EQ(r.iterations, 1);
}

TEST(SolveScore, RejectsBadInput) {
  auto s = [](const Vector& t) { return t; };
  auto j = [](const Vector& t) { return Matrix::Identity(t.size(), t.size()); };
  SolverOptions opt;
  opt.tol = 0.0;
  EXPECT_THROW(solve_score(s, j, Vector::Zero(2), opt), std::invalid_argument);
  EXPECT_THROW(solve_score([](const Vector&) { return Vector(Vector::Zero(3)); }, j, Vector::Zero(2)),
               std::invalid_argument);
  EXPECT_THROW(solve_score([](const Vector& t) { return Vector(t.array() / 0.0); }, j, Vector::Zero(2)),
               std::domain_error);
}

TEST(FitWeighted, UnitWeightsMatchTheOracleMinimizer) {
  for (const auto& loss : mross_test::all_losses()) {
    const auto pts = mross_test::random_points(17, 400, 4);
    const SolveReport r = fit_weighted(loss, WeightedSample{pts, std::vector<double>(pts.size(), 1.0)},
                                       Vector::Zero(4));
    ASSERT_TRUE(r.converged) << mross_test::name(loss);
    EXPECT_LE((r.theta - mross_test::oracle_minimize(loss, pts)).cwiseAbs().maxCoeff(), 1e-8)
        << mross_test::name(loss);
  }
}

TEST(FitWeighted, DuplicateEqualsDoubledWeight) {
  for (const auto& loss : mross_test::all_losses()) {
    auto pts = mross_test::random_points(23, 200, 3);
    WeightedSample doubled{pts, std::vector<double>(pts.size(), 1.0)};
    doubled.weights[5] = 2.0;
    WeightedSample duplicated{pts, std::vector<double>(pts.size() + 1, 1.0)};
    duplicated.points.push_back(pts[5]);
    const Vector a = fit_weighted(loss, doubled, Vector::Zero(3)).theta;
    const Vector b = fit_weighted(loss, duplicated, Vector::Zero(3)).theta;
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-10) << mross_test::name(loss);
  }
}

TEST(FitWeighted, ConstantInverseProbabilityWeightsCancel) {
  const auto pts = mross_test::random_points(29, 300, 5);
  const double n = 50000.0, r = 300.0;
  const Vector a = fit_weighted(LossSpec::logistic(), WeightedSample{pts, std::vector<double>(300, 1.0)},
                                Vector::Zero(5)).theta;
  const Vector b = fit_weighted(LossSpec::logistic(),
                                WeightedSample{pts, std::vector<double>(300, 1.0 / (n * (r / n)))}, Vector::Zero(5))
                       .theta;
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FitWeighted, ValidatesItsInput) {
  const auto pts = mross_test::random_points(1, 10, 2);
  EXPECT_THROW(fit_weighted(LossSpec::logistic(), WeightedSample{pts, {1.0}}, Vector::Zero(2)),
               std::invalid_argument);
  EXPECT_THROW(fit_weighted(LossSpec::logistic(), WeightedSample{pts, std::vector<double>(10, 0.0)}, Vector::Zero(2)),
               std::invalid_argument);
  std::vector<double> w(10, 1.0);
  w[3] = -1.0;
  EXPECT_THROW(fit_weighted(LossSpec::logistic(), WeightedSample{pts, w}, Vector::Zero(2)), std::invalid_argument);
  EXPECT_THROW(fit_weighted(LossSpec::logistic(), WeightedSample{pts, std::vector<double>(10, 1.0)}, Vector::Zero(3)),
               std::invalid_argument);
}

TEST(FitWeighted, DwdStartsAwayFromTheFlatRegion) {
  // at theta = 0 every DWD margin is on the linear branch and the Jacobian vanishes
  const auto pts = mross_test::random_points(3, 300, 4);
  const SolveReport r = fit_weighted(LossSpec::dwd(0.5), WeightedSample{pts, std::vector<double>(300, 1.0)},
                                     Vector::Zero(4));
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.final_score_norm, 1e-8);
}

TEST(FitPilot, SymmetricDataAndLogisticHessianAtZero) {
  std::vector<LabeledPoint> pts;
  for (int k = 0; k < 5; ++k)
    for (const auto& p : symmetric_four()) pts.push_back(p);
  const PilotFit f = fit_pilot(LossSpec::logistic(), pts);
  EXPECT_LE(f.theta.cwiseAbs().maxCoeff(), 1e-12);
  Matrix expect = Matrix::Zero(2, 2);
  for (const auto& p : pts) expect += p.x * p.x.transpose();
  expect *= 0.25 / static_cast<double>(pts.size());
  EXPECT_LE((f.hessian - expect).norm(), 1e-12);
  EXPECT_EQ(f.r0(), pts.size());
}

TEST(FitPilot, RequiresTenPointsPerDimension) {
  const auto pts = mross_test::random_points(4, 39, 4);
  EXPECT_THROW(fit_pilot(LossSpec::logistic(), pts), std::invalid_argument);
  EXPECT_THROW(fit_pilot(LossSpec::logistic(), {}), std::invalid_argument);
}

TEST(FitPilot, NonConvergenceIsAnError) {
  std::vector<LabeledPoint> pts;
  for (int k = 0; k < 20; ++k) pts.push_back(pt(1, 1.0 + k, 1)), pts.push_back(pt(1, -1.0 - k, -1));
  EXPECT_THROW(fit_pilot(LossSpec::logistic(), pts), std::runtime_error);
}

// The bound is the 95% quantile of |N(0, H^-1 / r0)|, with H the mean
// logistic Hessian at theta_t on an independent sample, inflated by 15% for
// the finite-sample excess of the MLE at r0 / d ~ 48.
double pilot_error_bound(const Vector& truth, std::size_t r0) {
  SyntheticStream big(CaseSpec{1, 40000, 21, 77});
  const auto pts = materialize(big);
  const mross_test::OracleLoss l{LossSpec::logistic()};
  Matrix h = Matrix::Zero(truth.size(), truth.size());
  for (const auto& p : pts) h += l.ddphi(p.y * p.x.dot(truth)) * p.x * p.x.transpose();
  h /= static_cast<double>(pts.size());
  const Matrix chol = h.inverse().llt().matrixL();
  std::mt19937_64 gen(3);
  std::normal_distribution<double> z;
  std::vector<double> norms(20000);
  Vector e(truth.size());
  for (auto& n : norms) {
    for (Eigen::Index j = 0; j < e.size(); ++j) e(j) = z(gen);
    n = (chol * e).norm() / std::sqrt(static_cast<double>(r0));
  }
  std::nth_element(norms.begin(), norms.begin() + 19000, norms.end());
  return 1.15 * norms[19000];
}

TEST(FitPilot, Case1PilotErrorCalibration) {
  const Vector truth = logistic_design_theta(21);
  const double bound = pilot_error_bound(truth, 1000);
  int within = 0;
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 200; ++k) {
    SyntheticStream s(CaseSpec{1, 1000, 21, 5000 + k});
    const PilotFit f = fit_pilot(LossSpec::logistic(), materialize(s));
    const double err = (f.theta - truth).norm();
    within += err <= bound;
    worst = std::max(worst, err);
  }
  EXPECT_GE(within, 190) << "bound " << bound << ", worst " << worst;
}

class SolverInvariants : public ::testing::TestWithParam<int> {};

TEST_P(SolverInvariants, AnalyticJacobianMatchesFiniteDifferences) {
  const auto c = mross_test::check_solver_jacobian(mross_test::all_losses()[GetParam()]);
  EXPECT_TRUE(c.ok) << c.detail;
}

TEST_P(SolverInvariants, NewtonScoreNormIsMonotone) {
  const auto c = mross_test::check_monotone_newton(mross_test::all_losses()[GetParam()]);
  EXPECT_TRUE(c.ok) << c.detail;
}

INSTANTIATE_TEST_SUITE_P(AllLosses, SolverInvariants, ::testing::Values(0, 1, 2));

}  // namespace
