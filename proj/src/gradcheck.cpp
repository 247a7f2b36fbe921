#include "mmgc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mmgc {

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

template <typename T>
GradcheckResult finite_diff_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> inputs,
                                  const FiniteDiffOptions& options) {
  for (auto& x : inputs) {
    if (!x.requires_grad()) throw GraphError("finite_diff_check input does not require grad");
    x.zero_grad();
  }
  const Tensor<T> loss = f();
  if (loss.numel() != 1) throw GraphError("finite_diff_check needs a scalar function");
  loss.backward();

  const T h = static_cast<T>(options.h);
  GradcheckResult result;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& x = inputs[t];
    const std::vector<T> analytic(x.grad().begin(), x.grad().end());
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      auto at = [&](T offset) {
        values[i] = saved + offset;
        const double y = static_cast<double>(f().item());
        if (!std::isfinite(y)) throw NumericError("finite_diff_check: non-finite f");
        return y;
      };
      const double d1 = at(h) - at(-h);
      double numeric = d1 / (2.0 * static_cast<double>(h));
      if (options.stencil == Stencil::kCentral4) {
        const double d2 = at(T(2) * h) - at(T(-2) * h);
        numeric = (8.0 * d1 - d2) / (12.0 * static_cast<double>(h));
      }
      values[i] = saved;
      const double err = relative_error(static_cast<double>(analytic[i]), numeric, options.floor);
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = t;
        result.worst_index = i;
      }
      ++result.checked;
    }
    x.zero_grad();
  }
  return result;
}

template <typename T>
GradcheckResult finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x,
                                  const FiniteDiffOptions& options) {
  return finite_diff_check<T>(std::function<Tensor<T>()>([&f, x] { return f(x); }), {x}, options);
}

#define MMGC_INSTANTIATE(T)                                                                                        \
  template GradcheckResult finite_diff_check<T>(const std::function<Tensor<T>()>&, std::vector<Tensor<T>>,      \
                                                const FiniteDiffOptions&);                                      \
  template GradcheckResult finite_diff_check<T>(const std::function<Tensor<T>(const Tensor<T>&)>&, Tensor<T>,   \
                                                const FiniteDiffOptions&);

MMGC_INSTANTIATE(float)
MMGC_INSTANTIATE(double)

#undef MMGC_INSTANTIATE

}  // namespace mmgc
