#include "deqmd/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace deqmd {

double psnr(const Image& x, const Image& ref) {
  require_same_shape(x, ref, "psnr");
  if (x.size() == 0) throw ShapeError("psnr: empty image");
  const double mse = (x.array() - ref.array()).square().mean();
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& x, const Image& ref, const SsimOptions& opt) {
  require_same_shape(x, ref, "ssim");
  const int H = x.height(), W = x.width(), n = opt.window;
  if (n < 1 || H < n || W < n) throw ShapeError("ssim: image smaller than the window");
  const double c1 = std::pow(opt.k1 * opt.dynamic_range, 2);
  const double c2 = std::pow(opt.k2 * opt.dynamic_range, 2);
  const double inv = 1.0 / (double(n) * n);

  double total = 0.0;
  for (int ch = 0; ch < x.channels(); ++ch) {
    double acc = 0.0;
    for (int r = 0; r + n <= H; ++r) {
      for (int c = 0; c + n <= W; ++c) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        for (int u = 0; u < n; ++u) {
          for (int v = 0; v < n; ++v) {
            const double a = x(r + u, c + v, ch), b = ref(r + u, c + v, ch);
            sx += a;
            sy += b;
            sxx += a * a;
            syy += b * b;
            sxy += a * b;
          }
        }
        const double mx = sx * inv, my = sy * inv;
        const double vx = std::max(0.0, sxx * inv - mx * mx), vy = std::max(0.0, syy * inv - my * my);
        const double cxy = sxy * inv - mx * my;
        acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
    total += acc / (double(H - n + 1) * (W - n + 1));
  }
  return total / x.channels();
}

}  // namespace deqmd
