#include "deqmd/bregman.hpp"

#include <algorithm>

namespace deqmd {

KlFidelity::KlFidelity(Image y, ConvolutionOperator op) : y_(std::move(y)), op_(std::move(op)) {
  if (shape_of(y_) != op_.shape()) throw ShapeError("KlFidelity: measurement shape does not match operator");
  if (!y_.all_finite() || (y_.array() < 0.0).any()) throw DomainError("KlFidelity: measurement must be finite and >= 0");
}

double KlFidelity::value_at_forward(const Image& ax) const {
  double total = 0.0;
  const auto& y = y_.array();
  const auto& m = ax.array();
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) {
      total += m[i];
      continue;
    }
    if (!(m[i] > 0.0)) throw DomainError("kl_value: (Ax)_i <= 0 where y_i > 0");
    total += y[i] * std::log(y[i] / m[i]) + m[i] - y[i];
  }
  return total;
}

double KlFidelity::value(const Image& x) const { return value_at_forward(op_.apply(x)); }

Image KlFidelity::gradient(const Image& x) const {
  const Image ax = op_.apply(x);
  Image ratio = ax.with_data(Image::Array::Ones(ax.size()));
  for (Eigen::Index i = 0; i < ax.size(); ++i) {
    const double yi = y_.array()[i];
    if (yi == 0.0) continue;
    if (!(ax.array()[i] > 0.0)) throw DomainError("kl_gradient: (Ax)_i = 0 with y_i > 0");
    ratio.array()[i] = 1.0 - yi / ax.array()[i];
  }
  return op_.adjoint(ratio);
}

double nolip_constant_kl(const Image& y) { return y.array().abs().sum(); }

ConvexityReport check_relative_convexity(Potential h, const std::function<double(const Image&)>& f_value, double L,
                                         const PositiveBox& region, int n_trials, Seed seed, double slack) {
  if (!(region.lo > 0.0) || !(region.hi > region.lo)) throw DomainError("check_relative_convexity: bad region");
  if (L < 0.0) throw DomainError("check_relative_convexity: L must be >= 0");
  const auto g = [&](const Image& x) { return L * potential_value(h, x) - f_value(x); };
  const auto& s = region.shape;
  const double log_lo = std::log(region.lo), log_hi = std::log(region.hi);

  Rng rng(seed);
  // Mix log-uniform and uniform coordinates so segments reach the
  // high-curvature corner near the positivity floor.
  const auto draw = [&] {
    Image x(s.height, s.width, s.channels);
    const bool logscale = rng.uniform() < 0.5;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double u = rng.uniform();
      x.array()[i] = logscale ? std::exp(log_lo + u * (log_hi - log_lo)) : region.lo + u * (region.hi - region.lo);
    }
    return x;
  };

  ConvexityReport report;
  report.worst_gap = -std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < n_trials; ++trial) {
    const Image x1 = draw();
    const Image x2 = draw();
    const double t = rng.uniform_open();
    const Image xt = x1.with_data(t * x1.array() + (1.0 - t) * x2.array());
    const double gap = g(xt) - (t * g(x1) + (1.0 - t) * g(x2));
    report.worst_gap = std::max(report.worst_gap, gap);
    if (gap > slack) ++report.violations;
    ++report.trials;
  }
  return report;
}

}  // namespace deqmd
