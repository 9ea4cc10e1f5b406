#pragma once

// Randomized self-verification: finite-difference gradient checks of full
// rollouts and property suites over the model, loss and task generators.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dwm {

struct CheckResult {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest observed error, where meaningful
  std::string detail;  // first failure, if any

  bool passed() const { return trials > 0 && failures == 0; }
};

// Relative error of reverse-mode gradients against central differences
// (step 1e-5) over every parameter of `configs` random small models with
// 3-5 addresses and 2-6 steps.
CheckResult gradient_check(std::size_t configs, std::uint64_t seed, double tolerance = 1e-4);

// Simplex closure of gate/shift/sharpen, shift mass conservation,
// static-bookmark and gate constraints over rollouts, masked-loss
// independence, and generator mask/target consistency.
std::vector<CheckResult> invariant_suites(std::size_t trials, std::uint64_t seed);

}  // namespace dwm
