#include "acfr/spline.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace acfr {

void SplineConfig::validate() const {
  if (degree < 1) throw std::invalid_argument("spline: degree must be >= 1, got " + std::to_string(degree));
  double prev = 0.0;
  for (std::size_t i = 0; i < knots.size(); ++i) {
    const double k = knots[i];
    if (!(k > prev) || !(k < 1.0)) {
      throw std::invalid_argument("spline: knots must be strictly increasing inside (0, 1); knot " +
                                  std::to_string(i) + " = " + std::to_string(k));
    }
    prev = k;
  }
}

namespace {

void fill_row(double t, const SplineConfig& cfg, double* out) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::out_of_range("spline: treatment " + std::to_string(t) + " outside [0, 1]");
  }
  double power = 1.0;
  for (int k = 0; k <= cfg.degree; ++k) {
    out[k] = power;
    power *= t;
  }
  for (std::size_t j = 0; j < cfg.knots.size(); ++j) {
    const double u = t - cfg.knots[j];
    out[cfg.degree + 1 + j] = u > 0.0 ? std::pow(u, cfg.degree) : 0.0;
  }
}

}  // namespace

Vector basis_eval(double t, const SplineConfig& cfg) {
  cfg.validate();
  Vector out(cfg.dim());
  fill_row(t, cfg, out.data());
  return out;
}

Matrix basis_matrix(std::span<const double> ts, const SplineConfig& cfg) {
  cfg.validate();
  Matrix out(static_cast<Eigen::Index>(ts.size()), cfg.dim());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    try {
      fill_row(ts[i], cfg, out.row(static_cast<Eigen::Index>(i)).data());
    } catch (const std::out_of_range& e) {
      throw std::out_of_range(std::string(e.what()) + " at row " + std::to_string(i));
    }
  }
  return out;
}

}  // namespace acfr
