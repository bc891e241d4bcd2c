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

// Convex classification-calibrated losses phi(z) with z = y * x'theta, their
// first two derivatives, and the per-point score / Hessian contributions.

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace mross {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class LossKind { Logistic, SquaredHinge, Dwd };

struct LossSpec {
  LossKind kind = LossKind::Logistic;
  double gamma = 0.5;  // DWD margin; ignored for the other kinds

  static LossSpec logistic() { return {LossKind::Logistic, 0.5}; }
  static LossSpec squared_hinge() { return {LossKind::SquaredHinge, 0.5}; }
  static LossSpec dwd(double gamma) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
      throw std::invalid_argument("DWD margin gamma must be positive");
    }
    return {LossKind::Dwd, gamma};
  }
};

inline std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Logistic: return "logistic";
    case LossKind::SquaredHinge: return "squared_hinge";
    case LossKind::Dwd: return "dwd";
  }
  return "unknown";
}

inline LossKind parse_loss_kind(std::string_view name) {
  if (name == "logistic") return LossKind::Logistic;
  if (name == "squared_hinge" || name == "svm") return LossKind::SquaredHinge;
  if (name == "dwd") return LossKind::Dwd;
  throw std::invalid_argument("unknown loss '" + std::string(name) + "'");
}

/// A feature vector whose first entry is the intercept 1, and a label in {-1,+1}.
struct LabeledPoint {
  Vector x;
  int y = 1;
};

namespace detail {

inline void require_finite(double z) {
  if (!std::isfinite(z)) throw std::domain_error("loss evaluated at a non-finite margin");
}

inline void require_dims(const Vector& theta, const LabeledPoint& p) {
  if (theta.size() != p.x.size()) {
    throw std::invalid_argument("dimension mismatch between theta (" + std::to_string(theta.size()) +
                                ") and point (" + std::to_string(p.x.size()) + ")");
  }
}

}  // namespace detail

inline double eval_loss(const LossSpec& spec, double z) {
  detail::require_finite(z);
  switch (spec.kind) {
    case LossKind::Logistic:
      return z > 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
    case LossKind::SquaredHinge: {
      const double slack = std::max(1.0 - z, 0.0);
      return slack * slack;
    }
    case LossKind::Dwd:
      return z >= spec.gamma ? 1.0 / z : 2.0 / spec.gamma - z / (spec.gamma * spec.gamma);
  }
  return 0.0;
}

/// First derivative. At the DWD kink z = gamma the (equal) left-branch slope is returned.
inline double eval_dloss(const LossSpec& spec, double z) {
  detail::require_finite(z);
  switch (spec.kind) {
    case LossKind::Logistic:
      // -1 / (1 + e^z), written to avoid overflow for large |z|
      if (z > 0.0) {
        const double e = std::exp(-z);
        return -e / (1.0 + e);
      }
      return -1.0 / (1.0 + std::exp(z));
    case LossKind::SquaredHinge:
      return -2.0 * std::max(1.0 - z, 0.0);
    case LossKind::Dwd:
      return z > spec.gamma ? -1.0 / (z * z) : -1.0 / (spec.gamma * spec.gamma);
  }
  return 0.0;
}

/// Second derivative. Kinks: squared hinge uses 0 at z = 1, DWD uses 2/z^3 at z = gamma.
inline double eval_ddloss(const LossSpec& spec, double z) {
  detail::require_finite(z);
  switch (spec.kind) {
    case LossKind::Logistic: {
      const double e = std::exp(-std::abs(z));
      return e / ((1.0 + e) * (1.0 + e));
    }
    case LossKind::SquaredHinge:
      return z < 1.0 ? 2.0 : 0.0;
    case LossKind::Dwd:
      return z >= spec.gamma ? 2.0 / (z * z * z) : 0.0;
  }
  return 0.0;
}

inline double margin(const Vector& theta, const LabeledPoint& p) {
  return static_cast<double>(p.y) * p.x.dot(theta);
}

/// Gradient of theta -> phi(y x'theta), i.e. phi'(y x'theta) y x.
inline Vector point_score(const LossSpec& spec, const Vector& theta, const LabeledPoint& p) {
  detail::require_dims(theta, p);
  return (eval_dloss(spec, margin(theta, p)) * static_cast<double>(p.y)) * p.x;
}

/// phi''(y x'theta) x x' (rank one, PSD).
inline Matrix point_hessian(const LossSpec& spec, const Vector& theta, const LabeledPoint& p) {
  detail::require_dims(theta, p);
  return eval_ddloss(spec, margin(theta, p)) * (p.x * p.x.transpose());
}

}  // namespace mross
