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

#include <gtest/gtest.h>

#include "mross/mross.hpp"
#include "support/invariants.hpp"
#include "support/oracles.hpp"

namespace {

using namespace mross;

Vector v(std::initializer_list<double> x) {
  Vector out(static_cast<Eigen::Index>(x.size()));
  Eigen::Index i = 0;
  for (double a : x) out(i++) = a;
  return out;
}

Vector mean_score(const LossSpec& L, const std::vector<LabeledPoint>& pts, const Vector& th) {
  Vector s = Vector::Zero(th.size());
  for (const auto& p : pts) s += point_score(L, th, p);
  return s / static_cast<double>(pts.size());
}

/// Every point of `pts` scanned with pi = 1 and C = infinity.
struct CertainScan {
  PilotFit pilot;
  ProjectionBasis basis;
  ScanSummary summary;
};

CertainScan certain_scan(const LossSpec& L, const std::vector<LabeledPoint>& pilot_pts,
                         const std::vector<LabeledPoint>& pts, BasisKind kind = BasisKind::LinearScore) {
  CertainScan c{fit_pilot(L, pilot_pts), {}, {}};
  c.basis = ProjectionBasis::from_pilot(c.pilot, kind);
  const InclusionRule rule{RuleKind::Uniform, static_cast<double>(pts.size()), kNoThreshold, std::nullopt, false};
  MemoryStream ms(pts);
  CounterRng rng(1);
  c.summary = scan(ms, make_plan(c.pilot, rule, L, pts.size()), c.basis, rng);
  return c;
}

TEST(GFeatures, Examples) {
  PilotFit p;
  p.loss = LossSpec::logistic();
  p.theta = Vector::Zero(2);
  const ProjectionBasis b = ProjectionBasis::from_pilot(p);
  EXPECT_EQ(g_features(b, {v({1, 0}), 1}), v({1, 1, -0.5, 0}));
  EXPECT_EQ(g_features(b, {v({1, 0}), -1}), v({1, -1, 0.5, 0}));
  // squared hinge has phi' = 0 beyond the margin
  ProjectionBasis h{LossSpec::squared_hinge(), v({3, 0}), BasisKind::LinearScore};
  EXPECT_EQ(g_features(h, {v({1, 0.4}), 1}), v({1, 1, 0, 0}));
  const ProjectionBasis c = ProjectionBasis::from_pilot(p, BasisKind::ConstantOnly);
  EXPECT_EQ(g_features(c, {v({1, 0}), -1}), v({1}));
  EXPECT_THROW(g_features(b, {v({1, 0, 0}), 1}), std::invalid_argument);
}

TEST(RaoBlackwell, FullInclusionReproducesTheFullAverage) {
  for (const auto& L : mross_test::all_losses()) {
    const auto pts = mross_test::random_points(61, 500, 4);
    const CertainScan c = certain_scan(L, mross_test::random_points(62, 100, 4), pts);
    const Vector th = v({0.2, -0.3, 0.5, 0.1});
    const Vector rb = rb_region_score(th, c.summary, c.basis);
    EXPECT_LE((rb - mean_score(L, pts, th)).norm(), 1e-12) << mross_test::name(L);
    for (double f : rb_correction(c.summary, c.basis).factor) EXPECT_NEAR(f, 1.0, 1e-10);
  }
}

TEST(RaoBlackwell, ConstantBasisIsARatioAdjustment) {
  SyntheticStream gen(CaseSpec{1, 3000, 5, 4});
  const auto pts = materialize(gen);
  const LossSpec L = LossSpec::logistic();
  const PilotFit pilot = fit_pilot(L, std::vector<LabeledPoint>(pts.begin(), pts.begin() + 200));
  const ProjectionBasis basis = ProjectionBasis::from_pilot(pilot, BasisKind::ConstantOnly);
  const InclusionRule rule{RuleKind::LOpt, 300, 2.0, std::nullopt, false};
  MemoryStream ms(pts);
  CounterRng rng(4);
  const ScanSummary s = scan(ms, make_plan(pilot, rule, L, pts.size()), basis, rng);
  const Vector th = pilot.theta * 0.9;
  // sum a Psi scaled by (n_s / n) / sum a
  double sum_a = 0.0;
  Vector ipw = Vector::Zero(5);
  for (const auto& sp : s.subsample) {
    const double a = 1.0 / (static_cast<double>(s.n_total) * sp.pi);
    sum_a += a;
    ipw += a * point_score(L, th, sp.point);
  }
  const Vector expect = (static_cast<double>(s.n_s) / static_cast<double>(s.n_total) / sum_a) * ipw;
  EXPECT_LE((rb_region_score(th, s, basis) - expect).norm(), 1e-10 * expect.norm());
  EXPECT_LE((ipw_region_score(th, s, L) - ipw).norm(), 1e-14);
}

TEST(RaoBlackwell, SingularGramFallsBackToIpw) {
  // one selected point cannot determine a d+2 dimensional projection
  const auto pts = mross_test::random_points(9, 200, 3);
  CertainScan c = certain_scan(LossSpec::logistic(), pts, pts);
  c.summary.subsample.resize(1);
  const RbCorrection rb = rb_correction(c.summary, c.basis);
  EXPECT_TRUE(rb.fallback);
  EXPECT_EQ(rb.factor, std::vector<double>{1.0});
  c.summary.subsample.clear();
  EXPECT_THROW(rb_correction(c.summary, c.basis), std::invalid_argument);
}

ScanSummary empty_summary(std::size_t d, std::size_t n) {
  ScanSummary s;
  s.xbar_plus = Vector::Zero(static_cast<Eigen::Index>(d));
  s.xbar_minus = Vector::Zero(static_cast<Eigen::Index>(d));
  s.n_total = n;
  return s;
}

TEST(Centroid, Examples) {
  const LossSpec L = LossSpec::logistic();
  const Vector th = v({0.4, -1.0, 2.0});
  ScanSummary s = empty_summary(3, 50);
  EXPECT_TRUE(centroid_score(th, s, L).isZero(0.0));

  const LabeledPoint xp{v({1, 2, 3}), 1};
  s.n_plus = 1;
  s.xbar_plus = xp.x;
  EXPECT_LE((centroid_score(th, s, L) - point_score(L, th, xp) / 50.0).norm(), 1e-15);

  // mirrored regions
  const mross_test::OracleLoss o{L};
  s.n_plus = s.n_minus = 7;
  s.xbar_minus = -xp.x;
  const Vector expect = 2.0 * (7.0 / 50.0) * o.dphi(xp.x.dot(th)) * xp.x;
  EXPECT_LE((centroid_score(th, s, L) - expect).norm(), 1e-14);
}

TEST(Combined, WithoutPilotItIsTheRegionScorePlusCentroids) {
  const auto f = mross_test::make_scan_fixture(LossSpec::logistic());
  MrossOptions o;
  o.combine_pilot = false;
  const Vector th = f.pilot.theta;
  const Vector expect = rb_region_score(th, f.summary, f.basis) + centroid_score(th, f.summary, f.pilot.loss);
  EXPECT_LE((combined_score(th, f.pilot, f.summary, f.basis, o) - expect).norm(), 1e-13);
}

TEST(Combined, FullInclusionGivesTheUnionAverage) {
  for (const auto& L : mross_test::all_losses()) {
    const auto pilot_pts = mross_test::random_points(71, 120, 4);
    const auto pts = mross_test::random_points(72, 600, 4);
    const CertainScan c = certain_scan(L, pilot_pts, pts);
    std::vector<LabeledPoint> all = pilot_pts;
    all.insert(all.end(), pts.begin(), pts.end());
    const Vector th = v({0.1, 0.2, -0.4, 0.3});
    EXPECT_LE((combined_score(th, c.pilot, c.summary, c.basis) - mean_score(L, all, th)).norm(), 1e-12)
        << mross_test::name(L);
    const MrossEstimate e = solve_mross(c.pilot, c.summary, c.basis);
    EXPECT_LE((e.theta - mross_test::oracle_minimize(L, all)).cwiseAbs().maxCoeff(), 1e-6) << mross_test::name(L);
  }
}

TEST(Combined, SolveReturnsARootOfTheScore) {
  for (const auto& L : mross_test::all_losses()) {
    const auto f = mross_test::make_scan_fixture(L);
    const MrossEstimate e = solve_mross(f.pilot, f.summary, f.basis);
    ASSERT_TRUE(e.report.converged);
    EXPECT_LE(combined_score(e.theta, f.pilot, f.summary, f.basis).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_EQ(e.diagnostics.realized_r, f.summary.realized_r());
    EXPECT_EQ(e.diagnostics.n_plus, f.summary.n_plus);
  }
}

TEST(Combined, EmptyInputsAreRejected) {
  auto f = mross_test::make_scan_fixture(LossSpec::logistic());
  f.summary.subsample.clear();
  EXPECT_THROW(CombinedEquation(f.pilot, f.summary, f.basis), std::invalid_argument);
  f.summary.n_total = 0;
  EXPECT_THROW(CombinedEquation(f.pilot, f.summary, f.basis), std::invalid_argument);
}

TEST(Combined, FixedSeedRegression) {
  const LossSpec L = LossSpec::logistic();
  SyntheticStream gen(CaseSpec{1, 20000, 21, 11});
  auto table = std::make_shared<const PointTable>(materialize_table(gen));
  const PilotFit pilot = fit_pilot(L, table->points(0, 500));
  MrossConfig cfg;
  cfg.budget_r = 1000;
  cfg.threshold = ThresholdPolicy::fixed(6.9);
  MemoryStream rest(table, 500);
  CounterRng rng(7);
  const MrossEstimate e = mross_fit(rest, pilot, cfg, rng, 19500);
  // recorded at first build
  EXPECT_NEAR(e.theta(0), -0.067257525413242508, 1e-9);
  EXPECT_NEAR(e.theta(1), 0.49370048830079394, 1e-9);
  EXPECT_EQ(e.diagnostics.realized_r, 1011u);
}

TEST(Variance, UniformWithoutCorrectionIsTheClassicSandwich) {
  for (const auto& L : mross_test::all_losses()) {
    const auto pts = mross_test::random_points(81, 3000, 4);
    const auto pilot_pts = mross_test::random_points(82, 200, 4);
    const PilotFit pilot = fit_pilot(L, pilot_pts);
    const ProjectionBasis basis = ProjectionBasis::from_pilot(pilot, BasisKind::ConstantOnly);
    const InclusionRule rule{RuleKind::Uniform, 400, kNoThreshold, std::nullopt, false};
    MemoryStream ms(pts);
    CounterRng rng(5);
    const ScanSummary s = scan(ms, make_plan(pilot, rule, L, pts.size()), basis, rng);
    MrossOptions o;
    o.rb_correction = false;
    o.use_centroids = false;
    o.combine_pilot = false;
    const MrossEstimate e = solve_mross(pilot, s, basis, o);
    std::vector<LabeledPoint> sub;
    std::vector<double> a;
    for (const auto& sp : s.subsample) {
      sub.push_back(sp.point);
      a.push_back(1.0 / (static_cast<double>(s.n_total) * sp.pi));
    }
    const Matrix oracle = mross_test::oracle_sandwich(L, sub, a, e.theta);
    EXPECT_LE((e.covariance - oracle).norm(), 1e-8 * oracle.norm()) << mross_test::name(L);
    // the constant basis projects out only the mean, which is zero at the root
    o.rb_correction = true;
    const Matrix with_rb = plugin_variance(e.theta, pilot, s, basis, o);
    EXPECT_LE((with_rb - oracle).norm(), 1e-6 * oracle.norm()) << mross_test::name(L);
  }
}

TEST(Variance, PopulationTermAddsAPositiveSemidefinitePart) {
  const auto f = mross_test::make_scan_fixture(LossSpec::logistic());
  const MrossEstimate e = solve_mross(f.pilot, f.summary, f.basis);
  const VarianceParts parts = plugin_variance_parts(e.theta, f.pilot, f.summary, f.basis);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(parts.total - parts.sampling);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12 * parts.total.norm());
  EXPECT_TRUE(parts.sampling.isApprox(parts.sampling.transpose()));
  EXPECT_LE((e.covariance - parts.sampling).norm(), 1e-12 * parts.sampling.norm());
}

TEST(Intervals, NormalQuantiles) {
  const Vector th = v({1.0, -2.0, 0.5});
  Matrix cov = Matrix::Zero(3, 3);
  cov(0, 0) = 1.0;
  cov(1, 1) = 4.0;
  const auto ci95 = confidence_intervals(th, cov, 0.95);
  EXPECT_NEAR(ci95[0].second - th(0), 1.959964, 1e-6);
  EXPECT_NEAR(th(0) - ci95[0].first, 1.959964, 1e-6);
  EXPECT_NEAR(ci95[1].second - th(1), 2 * 1.959964, 1e-6);
  EXPECT_EQ(ci95[2].first, 0.5);
  EXPECT_EQ(ci95[2].second, 0.5);
  const auto ci50 = confidence_intervals(th, cov, 0.5);
  EXPECT_NEAR(ci50[1].second - th(1), 0.674490 * 2.0, 1e-6);
}

TEST(Intervals, InvalidInputs) {
  const Vector th = v({1.0});
  EXPECT_THROW(confidence_intervals(th, Matrix::Identity(1, 1), 1.0), std::invalid_argument);
  EXPECT_THROW(confidence_intervals(th, Matrix::Identity(2, 2), 0.9), std::invalid_argument);
  EXPECT_THROW(confidence_intervals(th, -Matrix::Identity(1, 1), 0.9), std::domain_error);
}

}  // namespace
