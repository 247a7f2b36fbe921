#include "mmgc/optim.hpp"

#include <cmath>
#include <numbers>

namespace mmgc {

double Schedule::lr_at(std::size_t step) const {
  if (warmup_steps > total_steps) throw InvalidStep("warmup exceeds total steps");
  if (step > total_steps)
    throw InvalidStep("step " + std::to_string(step) + " beyond schedule of " + std::to_string(total_steps));
  if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const std::size_t decay = total_steps - warmup_steps;
  if (decay == 0) return peak;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(decay);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void AdamW<T>::step(const NamedParams<T>& params, double lr) {
  if (m_.empty()) {
    for (const auto& [name, p] : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ShapeMismatch("optimizer parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    if (m_[i].size() != p.numel()) throw ShapeMismatch("optimizer state shape mismatch for " + name);
    if (!p.has_grad()) continue;
    for (const T g : p.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + name);
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].second;
    if (!p.has_grad()) continue;
    const auto grad = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = static_cast<double>(grad[j]);
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      const double wj = static_cast<double>(w[j]);
      w[j] = static_cast<T>(wj - lr * m_hat / (std::sqrt(v_hat) + config_.eps) - lr * config_.weight_decay * wj);
    }
    p.zero_grad();
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace mmgc
