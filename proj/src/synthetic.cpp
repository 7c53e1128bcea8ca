#include "deqmd/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace deqmd {

Image synthetic_image(int height, int width, Seed seed) {
  if (height < 1 || width < 1) throw ShapeError("synthetic_image: empty size");
  Rng rng(seed);
  Image x(height, width, 1);
  const double gx = rng.uniform() - 0.5, gy = rng.uniform() - 0.5, base = 0.25 + 0.5 * rng.uniform();
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) x(r, c) = base + 0.3 * (gx * c / width + gy * r / height);

  const int shapes = 3 + int(rng.bits() % 4);
  for (int s = 0; s < shapes; ++s) {
    const double cr = rng.uniform() * height, cc = rng.uniform() * width;
    const double size = (0.12 + 0.25 * rng.uniform()) * std::min(height, width);
    const double level = 0.05 + 0.9 * rng.uniform();
    const int kind = int(rng.bits() % 3);
    const double freq = 0.6 + 0.8 * rng.uniform(), phase = 6.283185307179586 * rng.uniform();
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const double dr = r - cr, dc = c - cc;
        bool inside = false;
        double v = level;
        if (kind == 0) {
          inside = dr * dr + dc * dc <= size * size;
        } else if (kind == 1) {
          inside = std::abs(dr) <= size && std::abs(dc) <= 0.6 * size;
        } else {
          inside = std::abs(dr) <= 0.8 * size && std::abs(dc) <= 0.8 * size;
          v = level + 0.2 * std::sin(freq * (r + c) + phase);
        }
        if (inside) x(r, c) = v;
      }
    }
  }
  x.array() = x.array().max(0.02).min(0.98);
  return x;
}

std::vector<Image> synthetic_set(int count, int height, int width, Seed seed) {
  std::vector<Image> out;
  for (int i = 0; i < count; ++i) out.push_back(synthetic_image(height, width, derive(seed, std::uint64_t(i))));
  return out;
}

std::vector<Image> crop_patches(const std::vector<Image>& images, int count, int patch, Seed seed) {
  if (images.empty()) throw ShapeError("crop_patches: no source images");
  Rng rng(seed);
  std::vector<Image> out;
  for (int i = 0; i < count; ++i) {
    const Image& src = images[std::size_t(i) % images.size()];
    if (src.height() < patch || src.width() < patch) throw ShapeError("crop_patches: source smaller than patch");
    const int r0 = int(rng.bits() % std::uint64_t(src.height() - patch + 1));
    const int c0 = int(rng.bits() % std::uint64_t(src.width() - patch + 1));
    Image p(patch, patch, src.channels());
    for (int ch = 0; ch < src.channels(); ++ch)
      for (int r = 0; r < patch; ++r)
        for (int c = 0; c < patch; ++c) p(r, c, ch) = src(r0 + r, c0 + c, ch);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace deqmd
