#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmgc/tensor.hpp"

namespace mmgc {

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;   // number of scalar coordinates compared
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

enum class Stencil {
  kCentral2,  // (f(x+h) - f(x-h)) / 2h
  kCentral4,  // (8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h
};

struct FiniteDiffOptions {
  double h = 1e-4;
  Stencil stencil = Stencil::kCentral2;
  // Relative error is |a - b| / max(|a|, |b|, floor).
  double floor = 1e-8;
};

// Compares the autodiff gradient of scalar `f` w.r.t. every element of
// `inputs` against central differences. `f` must rebuild its graph on each
// call; inputs are perturbed in place and restored.
template <typename T>
GradcheckResult finite_diff_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> inputs,
                                  const FiniteDiffOptions& options = {});

// Single-input convenience form.
template <typename T>
GradcheckResult finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x,
                                  const FiniteDiffOptions& options = {});

double relative_error(double a, double b, double floor = 1e-8);

}  // namespace mmgc
