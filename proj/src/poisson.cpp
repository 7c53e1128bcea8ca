#include "deqmd/poisson.hpp"

#include <cmath>
#include <string>

namespace deqmd {
namespace {

std::uint64_t knuth(double lambda, Rng& rng) {
  const double limit = std::exp(-lambda);
  std::uint64_t k = 0;
  double p = rng.uniform_open();
  while (p > limit) {
    ++k;
    p *= rng.uniform_open();
  }
  return k;
}

// Hoermann (1993), "The transformed rejection method for generating Poisson
// random variables".
std::uint64_t ptrs(double lambda, Rng& rng) {
  const double slam = std::sqrt(lambda);
  const double loglam = std::log(lambda);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = rng.uniform() - 0.5;
    const double v = rng.uniform_open();
    const double us = 0.5 - std::abs(u);
    const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
    if (us >= 0.07 && v <= vr) return std::uint64_t(k);
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <= -lambda + k * loglam - std::lgamma(k + 1.0)) {
      return std::uint64_t(k);
    }
  }
}

}  // namespace

std::uint64_t poisson_draw(double lambda, Rng& rng) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("poisson_draw: rate must be finite and >= 0");
  if (lambda == 0.0) return 0;
  return lambda < 30.0 ? knuth(lambda, rng) : ptrs(lambda, rng);
}

Image sample_poisson(const Image& mean, const NoiseConfig& cfg, Seed seed) {
  if (!(cfg.alpha > 0.0) || !std::isfinite(cfg.alpha)) throw DomainError("sample_poisson: alpha must be finite and > 0");
  if (!mean.all_finite()) throw DomainError("sample_poisson: non-finite mean");
  if ((mean.array() < 0.0).any()) throw DomainError("sample_poisson: negative mean pixel");
  Image out(mean.height(), mean.width(), mean.channels());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double lambda = cfg.alpha * mean.array()[i];
    if (lambda == 0.0) continue;
    Rng rng(derive(seed, std::uint64_t(i)));
    out.array()[i] = double(poisson_draw(lambda, rng));
  }
  return out;
}

std::vector<ObservationPair> make_dataset(const std::vector<Image>& clean_images, const ConvolutionOperator& op,
                                          const NoiseConfig& cfg, Seed seed) {
  std::vector<ObservationPair> pairs;
  pairs.reserve(clean_images.size());
  for (std::size_t i = 0; i < clean_images.size(); ++i) {
    const Image& x = clean_images[i];
    if ((x.array() < 0.0).any() || (x.array() > 1.0).any()) {
      throw DomainError("make_dataset: clean image " + std::to_string(i) + " outside [0,1]");
    }
    const Seed s = derive(seed, i);
    pairs.push_back({x, sample_poisson(op.apply(x), cfg, s), cfg.alpha, s});
  }
  return pairs;
}

}  // namespace deqmd
