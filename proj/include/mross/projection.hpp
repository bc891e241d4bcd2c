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

// Projection features g(x, y) used to Rao-Blackwellize the IPW score.

#include <cstddef>

#include "mross/loss.hpp"
#include "mross/solver.hpp"

namespace mross {

enum class BasisKind {
  LinearScore,   // (1, y, phi'(y x'theta_pilot) y x'), length d + 2
  ConstantOnly,  // (1): the correction reduces to a ratio (Hajek) adjustment
};

struct ProjectionBasis {
  LossSpec loss;
  Vector theta_pilot;
  BasisKind kind = BasisKind::LinearScore;

  static ProjectionBasis from_pilot(const PilotFit& pilot, BasisKind kind = BasisKind::LinearScore) {
    return {pilot.loss, pilot.theta, kind};
  }

  std::size_t dim() const {
    return kind == BasisKind::LinearScore ? static_cast<std::size_t>(theta_pilot.size()) + 2 : 1;
  }

  /// Fills `out` (length dim()) given the precomputed phi'(y x'theta_pilot).
  template <class Out>
  void fill(const LabeledPoint& p, double dphi, Out&& out) const {
    out(0) = 1.0;
    if (kind == BasisKind::ConstantOnly) return;
    out(1) = static_cast<double>(p.y);
    out.tail(p.x.size()) = (dphi * p.y) * p.x;
  }

  template <class Out>
  void fill(const LabeledPoint& p, Out&& out) const {
    fill(p, eval_dloss(loss, margin(theta_pilot, p)), out);
  }
};

inline Vector g_features(const ProjectionBasis& basis, const LabeledPoint& p) {
  if (p.x.size() != basis.theta_pilot.size()) throw std::invalid_argument("g_features: dimension mismatch");
  Vector g(basis.dim());
  basis.fill(p, g);
  return g;
}

}  // namespace mross
