#pragma once

#include "deqmd/image.hpp"

namespace deqmd {

/// Reported for identical images instead of +inf.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) with peak 1.
double psnr(const Image& x, const Image& ref);

struct SsimOptions {
  int window = 8;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean local SSIM over every fully contained window (uniform weights,
/// population moments), averaged over channels.
double ssim(const Image& x, const Image& ref, const SsimOptions& opt = {});

}  // namespace deqmd
