#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "deqmd/convolution.hpp"
#include "deqmd/image.hpp"
#include "deqmd/random.hpp"

namespace deqmd {

/// Legendre potentials. Burg: h(x) = -sum log x_i on the open positive
/// orthant. HalfSquaredNorm: h(x) = 0.5 ||x||^2 on all of R^n.
enum class Potential { burg, half_squared_norm };

inline const char* to_string(Potential h) {
  return h == Potential::burg ? "burg" : "half_squared_norm";
}

namespace detail {

template <typename Scalar>
void require_positive(const BasicImage<Scalar>& x, const char* what) {
  if (!x.all_finite() || !(x.array() > Scalar(0)).all()) {
    throw DomainError(std::string(what) + ": Burg entropy requires strictly positive finite pixels");
  }
}

}  // namespace detail

template <typename Scalar>
Scalar potential_value(Potential h, const BasicImage<Scalar>& x) {
  if (h == Potential::half_squared_norm) return Scalar(0.5) * x.array().square().sum();
  detail::require_positive(x, "potential_value");
  return -x.array().log().sum();
}

/// grad h: -1/x for Burg, identity for the Euclidean potential.
template <typename Scalar>
BasicImage<Scalar> mirror_map(Potential h, const BasicImage<Scalar>& x) {
  if (h == Potential::half_squared_norm) return x;
  detail::require_positive(x, "mirror_map");
  return x.with_data(-x.array().inverse());
}

/// grad h* = (grad h)^{-1}: -1/u on u < 0 for Burg.
template <typename Scalar>
BasicImage<Scalar> inverse_mirror_map(Potential h, const BasicImage<Scalar>& u) {
  if (h == Potential::half_squared_norm) return u;
  if (!u.all_finite() || !(u.array() < Scalar(0)).all()) {
    throw DomainError("inverse_mirror_map: Burg dual point must be strictly negative");
  }
  return u.with_data(-u.array().inverse());
}

/// D_h(x1, x2) = h(x1) - h(x2) - <grad h(x2), x1 - x2>.
template <typename Scalar>
Scalar bregman_divergence(Potential h, const BasicImage<Scalar>& x1, const BasicImage<Scalar>& x2) {
  require_same_shape(x1, x2, "bregman_divergence");
  if (h == Potential::half_squared_norm) return Scalar(0.5) * (x1.array() - x2.array()).square().sum();
  detail::require_positive(x1, "bregman_divergence");
  detail::require_positive(x2, "bregman_divergence");
  // Per-pixel form r - log r - 1 with r = x1/x2; never negative, no cancellation between large sums.
  const auto r = x1.array() / x2.array();
  return (r - r.log() - Scalar(1)).sum();
}

/// Bregman projection onto the box [0, a]^n under Burg entropy. For positive
/// inputs it coincides with the Euclidean projection: min(x, a).
template <typename Scalar>
BasicImage<Scalar> box_bregman_prox(Potential h, const BasicImage<Scalar>& x, Scalar a) {
  if (!(a > Scalar(0))) throw DomainError("box_bregman_prox: a must be > 0");
  if (h == Potential::burg) {
    detail::require_positive(x, "box_bregman_prox");
    return x.with_data(x.array().min(a));
  }
  return x.with_data(x.array().max(Scalar(0)).min(a));
}

/// KL(y, Ax) = sum y log(y / Ax) + Ax - y, with 0 log 0 = 0.
class KlFidelity {
 public:
  KlFidelity(Image y, ConvolutionOperator op);

  const Image& y() const noexcept { return y_; }
  const ConvolutionOperator& op() const noexcept { return op_; }

  double value(const Image& x) const;
  /// Evaluated at a precomputed Ax (avoids re-applying A).
  double value_at_forward(const Image& ax) const;
  /// A^T (1 - y / Ax).
  Image gradient(const Image& x) const;

 private:
  Image y_;
  ConvolutionOperator op_;
};

inline double kl_value(const KlFidelity& f, const Image& x) { return f.value(x); }
inline Image kl_gradient(const KlFidelity& f, const Image& x) { return f.gradient(x); }

/// NoLip constant of KL(y, A.) relative to Burg entropy: ||y||_1.
double nolip_constant_kl(const Image& y);

struct PositiveBox {
  double lo = kPositivityFloor;
  double hi = 1.0;
  ImageShape shape;
};

struct ConvexityReport {
  int trials = 0;
  int violations = 0;
  double worst_gap = 0.0;  // max of g(seg) - chord, positive means violation
};

/// Samples random segments (x1, x2, t) in the box and tests
///   g(t x1 + (1-t) x2) <= t g(x1) + (1-t) g(x2) + slack,  g = L h - f.
ConvexityReport check_relative_convexity(Potential h, const std::function<double(const Image&)>& f_value, double L,
                                         const PositiveBox& region, int n_trials, Seed seed, double slack = 1e-9);

}  // namespace deqmd
