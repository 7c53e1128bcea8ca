#pragma once

#include <vector>

#include "deqmd/convolution.hpp"
#include "deqmd/image.hpp"
#include "deqmd/random.hpp"

namespace deqmd {

struct NoiseConfig {
  double alpha = 100.0;  // photon intensity: y ~ Poiss(alpha * A x)
};

/// One Poisson draw. Knuth multiplication below 30, PTRS transformed
/// rejection at and above. Poiss(0) = 0.
std::uint64_t poisson_draw(double lambda, Rng& rng);

/// Independent Poisson(alpha * mean) per pixel; pixel i uses the sub-stream
/// derive(seed, i), so output does not depend on traversal order.
Image sample_poisson(const Image& mean, const NoiseConfig& cfg, Seed seed);

struct ObservationPair {
  Image clean;     // x* in [0,1]
  Image observed;  // y, raw photon counts
  double alpha = 0.0;
  Seed seed;
};

/// Measurements are in counts; divide by alpha to bring them to image units.
inline Image normalized_measurement(const ObservationPair& p) {
  return p.observed.with_data(p.observed.array() / p.alpha);
}

/// Pair i is sampled with seed derive(seed, i).
std::vector<ObservationPair> make_dataset(const std::vector<Image>& clean_images, const ConvolutionOperator& op,
                                          const NoiseConfig& cfg, Seed seed);

}  // namespace deqmd
