#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "unlearn/tensor.hpp"

namespace unlearn {

/// Central-difference gradient of a scalar function, one element at a time.
/// `f` is called with perturbed copies of `x`; any non-finite evaluation
/// raises NumericError.
template <typename T, typename F>
BasicTensor<T> finite_difference_grad(F&& f, const BasicTensor<T>& x, double eps = 1e-4) {
  if (!(eps > 0.0)) throw NumericError("finite difference step must be positive");
  BasicTensor<T> grad(x.shape());
  BasicTensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = static_cast<T>(orig + eps);
    const double up = static_cast<double>(f(probe));
    probe[i] = static_cast<T>(orig - eps);
    const double down = static_cast<double>(f(probe));
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite function value while differencing element " + std::to_string(i));
    }
    grad[i] = static_cast<T>((up - down) / (2.0 * eps));
  }
  return grad;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps vanishing gradients from
/// turning round-off into large relative errors.
inline double relative_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace unlearn
