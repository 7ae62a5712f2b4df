#pragma once

// Finite-difference check of every graph primitive and model path.

#include <cstdint>
#include <string>
#include <vector>

namespace acfr {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckComponent {
  std::string name;
  double worst = 0;  // max relative error over all probed coordinates
};

struct GradCheckReport {
  std::uint64_t seed = 0;
  std::vector<GradCheckComponent> components;

  double worst() const;
  bool passed(double tolerance = kGradCheckTolerance) const;
  std::string to_text(double tolerance = kGradCheckTolerance) const;
};

GradCheckReport run_grad_checks(std::uint64_t seed);

}  // namespace acfr
