#pragma once

#include <vector>

#include "deqmd/image.hpp"
#include "deqmd/random.hpp"

namespace deqmd {

/// Piecewise-smooth test scene in [0, 1]: a shaded background with random
/// discs, rectangles and a striped patch.
Image synthetic_image(int height, int width, Seed seed);

/// `count` scenes, scene i drawn from derive(seed, i).
std::vector<Image> synthetic_set(int count, int height, int width, Seed seed);

/// Random crops of size `patch` taken from the given images, round robin.
std::vector<Image> crop_patches(const std::vector<Image>& images, int count, int patch, Seed seed);

}  // namespace deqmd
