#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mmgc {

struct ComponentCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_input = 0;  // index into the component's input list
  std::size_t worst_index = 0;
  double seconds = 0.0;
  bool passed = false;
};

struct GradcheckSuiteOptions {
  double tolerance = 1e-5;
  std::uint64_t seed = 7;
  // Name of a component whose backward is deliberately corrupted (its output
  // passes through negate_grad). Used to prove the suite can fail.
  std::string sabotage;
};

// Component names in run order.
std::vector<std::string> gradcheck_components();

// 64-bit central-difference check of every block and of the full m1/m2/m3
// forwards on tiny configurations.
std::vector<ComponentCheck> run_gradcheck_suite(const GradcheckSuiteOptions& options = {});

}  // namespace mmgc
