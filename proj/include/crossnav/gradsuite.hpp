#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace crossnav {

struct GradCheckResult {
  std::string module;
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t coordinates = 0;
};

/// Finite-difference checks on small random instances (parameters uniform in
/// [-1, 1]): one navigator step on a two-viewpoint world, a teacher-forced
/// three-step rollout, and the critic loss on a two-step, three-token pair.
std::vector<GradCheckResult> standard_grad_checks(std::uint64_t seed, double epsilon = 1e-5);

}  // namespace crossnav
