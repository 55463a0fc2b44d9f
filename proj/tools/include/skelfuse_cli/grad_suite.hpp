#pragma once

#include <string>
#include <vector>

namespace skelfuse::cli {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
};

inline constexpr double kGradTolerance = 1e-3;

/// Finite-difference checks of every differentiable building block the model uses, each on a
/// small fixed-seed instance.
std::vector<GradCheckResult> run_gradient_suite();

}  // namespace skelfuse::cli
