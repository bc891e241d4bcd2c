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

// Reference computations written independently of the library code paths:
// closed-form losses, a damped Newton minimizer on the empirical risk, and the
// textbook IPW sandwich.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "mross/loss.hpp"

namespace mross_test {

using mross::LabeledPoint;
using mross::LossKind;
using mross::LossSpec;
using mross::Matrix;
using mross::Vector;

struct OracleLoss {
  LossSpec spec;

  double phi(double z) const {
    switch (spec.kind) {
      case LossKind::Logistic: return std::log(1.0 + std::exp(-z));
      case LossKind::SquaredHinge: return z < 1.0 ? (1.0 - z) * (1.0 - z) : 0.0;
      case LossKind::Dwd: {
        const double g = spec.gamma;
        return z < g ? (2.0 * g - z) / (g * g) : 1.0 / z;
      }
    }
    return 0.0;
  }
  double dphi(double z) const {
    switch (spec.kind) {
      case LossKind::Logistic: return -std::exp(-z) / (1.0 + std::exp(-z));
      case LossKind::SquaredHinge: return z < 1.0 ? 2.0 * (z - 1.0) : 0.0;
      case LossKind::Dwd: return z <= spec.gamma ? -1.0 / (spec.gamma * spec.gamma) : -1.0 / (z * z);
    }
    return 0.0;
  }
  double ddphi(double z) const {
    switch (spec.kind) {
      case LossKind::Logistic: {
        const double p = 1.0 / (1.0 + std::exp(-z));
        return p * (1.0 - p);
      }
      case LossKind::SquaredHinge: return z < 1.0 ? 2.0 : 0.0;
      case LossKind::Dwd: return z < spec.gamma ? 0.0 : 2.0 / (z * z * z);
    }
    return 0.0;
  }
};

/// Weighted mean risk and its derivatives, evaluated point by point.
struct OracleRisk {
  OracleLoss loss;
  const std::vector<LabeledPoint>* points;
  std::vector<double> w;

  double value(const Vector& th) const {
    double v = 0.0;
    for (std::size_t i = 0; i < points->size(); ++i) {
      const auto& p = (*points)[i];
      v += w[i] * loss.phi(p.y * p.x.dot(th));
    }
    return v;
  }
  Vector grad(const Vector& th) const {
    Vector g = Vector::Zero(th.size());
    for (std::size_t i = 0; i < points->size(); ++i) {
      const auto& p = (*points)[i];
      g += w[i] * loss.dphi(p.y * p.x.dot(th)) * p.y * p.x;
    }
    return g;
  }
  Matrix hess(const Vector& th) const {
    Matrix h = Matrix::Zero(th.size(), th.size());
    for (std::size_t i = 0; i < points->size(); ++i) {
      const auto& p = (*points)[i];
      h += w[i] * loss.ddphi(p.y * p.x.dot(th)) * p.x * p.x.transpose();
    }
    return h;
  }
};

/// Levenberg-damped Newton on the risk value: the damping grows tenfold until
/// the step decreases the risk, and shrinks after each success.
inline Vector oracle_minimize(const LossSpec& spec, const std::vector<LabeledPoint>& pts,
                              std::vector<double> w = {}) {
  if (w.empty()) w.assign(pts.size(), 1.0);
  const OracleRisk risk{{spec}, &pts, std::move(w)};
  const auto d = pts.front().x.size();
  Vector th = Vector::Zero(d);
  double mu = 1e-3 * static_cast<double>(pts.size());
  double f = risk.value(th);
  for (int it = 0; it < 1000; ++it) {
    const Vector g = risk.grad(th);
    if (g.cwiseAbs().maxCoeff() < 1e-13) break;
    const Matrix h = risk.hess(th);
    bool moved = false;
    for (int k = 0; k < 60 && !moved; ++k) {
      const Matrix damped = h + mu * Matrix::Identity(d, d);
      const Vector cand = th - damped.llt().solve(g);
      const double fc = risk.value(cand);
      if (fc <= f) {
        th = cand;
        f = fc;
        mu = std::max(mu * 0.1, 1e-300);
        moved = true;
      } else {
        mu *= 10.0;
      }
    }
    if (!moved) break;
  }
  return th;
}

/// Grid search of the mean risk over [lo, hi]^2 with spacing h.
inline Vector oracle_grid_2d(const LossSpec& spec, const std::vector<LabeledPoint>& pts, double lo, double hi,
                             double h) {
  const OracleRisk risk{{spec}, &pts, std::vector<double>(pts.size(), 1.0)};
  Vector best(2), th(2);
  double fbest = INFINITY;
  // coarse pass, then a fine pass around the coarse minimum
  for (double a = lo; a <= hi; a += 0.01) {
    for (double b = lo; b <= hi; b += 0.01) {
      th << a, b;
      const double f = risk.value(th);
      if (f < fbest) {
        fbest = f;
        best = th;
      }
    }
  }
  const Vector c = best;
  for (double a = c(0) - 0.02; a <= c(0) + 0.02; a += h) {
    for (double b = c(1) - 0.02; b <= c(1) + 0.02; b += h) {
      th << a, b;
      const double f = risk.value(th);
      if (f < fbest) {
        fbest = f;
        best = th;
      }
    }
  }
  return best;
}

/// H^{-1} M H^{-1} with H = sum a phi'' x x' and M = sum a^2 Psi Psi'.
inline Matrix oracle_sandwich(const LossSpec& spec, const std::vector<LabeledPoint>& pts, const std::vector<double>& a,
                              const Vector& th) {
  const OracleLoss l{spec};
  const auto d = th.size();
  Matrix h = Matrix::Zero(d, d), m = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    const double z = p.y * p.x.dot(th);
    h += a[i] * l.ddphi(z) * p.x * p.x.transpose();
    const Vector psi = l.dphi(z) * p.y * p.x;
    m += a[i] * a[i] * psi * psi.transpose();
  }
  const Matrix hi = h.inverse();
  return hi * m * hi;
}

/// Gaussian features with an intercept and labels from a logistic model with
/// modest signal, so that the data are not separable.
inline std::vector<LabeledPoint> random_points(std::uint64_t seed, std::size_t n, std::size_t d,
                                               double signal = 0.7) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  Vector beta(static_cast<Eigen::Index>(d));
  for (Eigen::Index j = 0; j < beta.size(); ++j) beta(j) = signal * z(gen) / std::sqrt(static_cast<double>(d));
  std::vector<LabeledPoint> pts(n);
  for (auto& p : pts) {
    p.x.resize(static_cast<Eigen::Index>(d));
    p.x(0) = 1.0;
    for (Eigen::Index j = 1; j < p.x.size(); ++j) p.x(j) = z(gen);
    const double pr = 1.0 / (1.0 + std::exp(-p.x.dot(beta)));
    p.y = u(gen) < pr ? 1 : -1;
  }
  return pts;
}

}  // namespace mross_test
