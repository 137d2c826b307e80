#pragma once

// Finite-difference checks of every differentiable op and of the full
// training loss on a tiny network.

#include <cstdint>
#include <string>
#include <vector>

#include "c5cc/autodiff.hpp"

namespace c5cc {

struct GradCheckCase {
  std::string name;
  double worst = 0.0;  // largest relative error over all leaves
  bool passed = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  bool include_end_to_end = true;
  int e2e_base_channels = 4;
};

std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckOptions& opt = {});

}  // namespace c5cc
