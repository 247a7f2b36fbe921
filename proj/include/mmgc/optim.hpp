#pragma once

#include <cstddef>
#include <vector>

#include "mmgc/nn.hpp"

namespace mmgc {

inline constexpr double kPaperPeakLr = 1e-5;

// Linear warmup to `peak`, then half-cosine decay to zero at `total_steps`.
struct Schedule {
  double peak = 3e-4;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;

  // Throws InvalidStep for step > total_steps or inconsistent warmup.
  double lr_at(std::size_t step) const;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Bias-corrected Adam with decoupled weight decay:
//   w <- w - lr·m̂/(√v̂ + ε) - lr·λ·w
// Moments are kept in double regardless of the parameter precision.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // Updates every parameter that holds a gradient, then zeroes all grads.
  // Parameters without an accumulated gradient are left untouched (no decay
  // either). The parameter list must be the same, in the same order, on
  // every call.
  void step(const NamedParams<T>& params, double lr);

  std::size_t steps_taken() const { return step_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace mmgc
