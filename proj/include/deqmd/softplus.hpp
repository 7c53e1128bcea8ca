#pragma once

#include <algorithm>
#include <cmath>

namespace deqmd {

/// Softplus_beta(x) = log(1 + exp(beta x)) / beta, evaluated as
/// max(x, 0) + log1p(exp(-beta |x|)) / beta so neither branch overflows.
template <typename Scalar>
Scalar softplus(Scalar x, Scalar beta) {
  const Scalar z = beta * x;
  return (std::max(z, Scalar(0)) + std::log1p(std::exp(-std::abs(z)))) / beta;
}

/// d/dx Softplus_beta(x) = sigma(beta x).
template <typename Scalar>
Scalar softplus_derivative(Scalar x, Scalar beta) {
  const Scalar z = beta * x;
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

}  // namespace deqmd
