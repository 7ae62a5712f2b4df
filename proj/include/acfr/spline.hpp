#pragma once

#include "acfr/diffmath.hpp"

#include <span>
#include <vector>

namespace acfr {

/// Truncated power basis on [0, 1]:
///   [1, t, ..., t^p, (t - k_1)_+^p, ..., (t - k_q)_+^p]
struct SplineConfig {
  int degree = 2;
  std::vector<double> knots{1.0 / 3.0, 2.0 / 3.0};

  /// Basis dimension m = p + 1 + q.
  Eigen::Index dim() const { return degree + 1 + static_cast<Eigen::Index>(knots.size()); }

  /// Throws std::invalid_argument unless degree >= 1 and 0 < k_1 < ... < k_q < 1.
  void validate() const;
};

/// S(t) for a single treatment; t must lie in [0, 1].
Vector basis_eval(double t, const SplineConfig& cfg);

/// N x m matrix whose row i is basis_eval(ts[i]).
Matrix basis_matrix(std::span<const double> ts, const SplineConfig& cfg);

}  // namespace acfr
