#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "deqmd/convolution.hpp"

namespace deqmd {

Kernel load_kernel(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open kernel file " + path.string());
  int h = 0, w = 0, ar = 0, ac = 0;
  if (!(in >> h >> w >> ar >> ac) || h < 1 || w < 1) {
    throw IoError(path.string() + ": bad kernel header, expected \"h w anchor_r anchor_c\"");
  }
  Kernel::Weights weights(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!(in >> weights(r, c))) {
        throw IoError(path.string() + ": kernel row " + std::to_string(r + 1) + " is short");
      }
    }
  }
  return Kernel(weights, ar, ac);
}

void save_kernel(const Kernel& k, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write kernel file " + path.string());
  out << k.rows() << ' ' << k.cols() << ' ' << k.anchor_row() << ' ' << k.anchor_col() << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (int r = 0; r < k.rows(); ++r) {
    for (int c = 0; c < k.cols(); ++c) out << (c ? " " : "") << k.weights()(r, c);
    out << '\n';
  }
}

}  // namespace deqmd
