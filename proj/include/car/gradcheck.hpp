#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace car {

struct GradCheckOptions {
  std::uint64_t seed = 7;
  std::size_t instances = 50;  // random instances per suite
  std::size_t max_size = 16;   // HR extent ceiling for resampler instances
  double tol = 1e-5;           // relative-error bound for single ops
  double end_to_end_tol = 1e-4;
  double fd_step = 1e-4;
  bool corrupt = false;  // negative control: skews one suite's analytic grads
};

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checks = 0;
  bool pass = false;
};

/// Compares every analytic gradient against central finite differences with
/// rel_err = |a - n| / max(|a|, |n|, 1e-6). Random instances avoid the known
/// non-differentiable sets (integer sample positions, |.| kinks, the ReLU
/// origin) by construction.
std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& opt = {});

bool all_passed(const std::vector<GradCheckResult>& results);

}  // namespace car
