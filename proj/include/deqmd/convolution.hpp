#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

#include "deqmd/image.hpp"

namespace deqmd {

/// Non-negative blur kernel with an anchor (the kernel tap aligned with the
/// output pixel).
template <typename Scalar>
class BasicKernel {
 public:
  using Weights = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  BasicKernel(Weights weights, int anchor_row, int anchor_col)
      : weights_(std::move(weights)), anchor_row_(anchor_row), anchor_col_(anchor_col) {
    if (weights_.size() == 0) throw ShapeError("kernel: empty weights");
    if (anchor_row_ < 0 || anchor_row_ >= weights_.rows() || anchor_col_ < 0 || anchor_col_ >= weights_.cols()) {
      throw ShapeError("kernel: anchor outside the weight grid");
    }
    if (!weights_.isFinite().all() || (weights_ < Scalar(0)).any()) {
      throw DomainError("kernel: weights must be finite and non-negative");
    }
    if (!(weights_.sum() > Scalar(0))) throw DomainError("kernel: weights must have positive mass");
  }

  /// Centered anchor.
  explicit BasicKernel(Weights weights)
      : BasicKernel(weights, int((weights.rows() - 1) / 2), int((weights.cols() - 1) / 2)) {}

  const Weights& weights() const noexcept { return weights_; }
  int rows() const noexcept { return int(weights_.rows()); }
  int cols() const noexcept { return int(weights_.cols()); }
  int anchor_row() const noexcept { return anchor_row_; }
  int anchor_col() const noexcept { return anchor_col_; }
  Scalar mass() const { return weights_.sum(); }

  bool symmetric() const {
    return anchor_row_ * 2 + 1 == rows() && anchor_col_ * 2 + 1 == cols() &&
           weights_.isApprox(weights_.reverse(), Scalar(0));
  }

  static BasicKernel delta() { return BasicKernel(Weights::Ones(1, 1), 0, 0); }

  static BasicKernel uniform(int size) {
    if (size < 1) throw ShapeError("kernel: size must be >= 1");
    return BasicKernel(Weights::Constant(size, size, Scalar(1) / Scalar(size * size)));
  }

  /// Sampled isotropic Gaussian normalized to unit mass.
  static BasicKernel gaussian(int size, Scalar sigma) {
    if (size < 1) throw ShapeError("kernel: size must be >= 1");
    if (!(sigma > Scalar(0))) throw DomainError("kernel: sigma must be > 0");
    Weights w(size, size);
    const Scalar c = Scalar(size - 1) / 2;
    for (int r = 0; r < size; ++r) {
      for (int k = 0; k < size; ++k) {
        const Scalar dr = r - c, dk = k - c;
        w(r, k) = std::exp(-(dr * dr + dk * dk) / (2 * sigma * sigma));
      }
    }
    return BasicKernel(w / w.sum());
  }

 private:
  Weights weights_;
  int anchor_row_;
  int anchor_col_;
};

using Kernel = BasicKernel<double>;

/// Text format: "h w anchor_r anchor_c" then h rows of w floats.
Kernel load_kernel(const std::filesystem::path& path);
void save_kernel(const Kernel& k, const std::filesystem::path& path);

struct ImageShape {
  int height = 0;
  int width = 0;
  int channels = 1;

  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

template <typename Scalar>
ImageShape shape_of(const BasicImage<Scalar>& x) {
  return {x.height(), x.width(), x.channels()};
}

/// Circular 2-D convolution A with its exact adjoint, applied channel-wise.
///   (A x)(r, c)   = sum_{u,v} K(u,v) x(r - u + ar, c - v + ac)
///   (A^T y)(r, c) = sum_{u,v} K(u,v) y(r + u - ar, c + v - ac)
/// with indices taken modulo the image size.
template <typename Scalar>
class BasicConvolutionOperator {
 public:
  using ImageT = BasicImage<Scalar>;

  BasicConvolutionOperator(BasicKernel<Scalar> kernel, ImageShape shape)
      : kernel_(std::move(kernel)), shape_(shape) {
    if (shape_.height < 1 || shape_.width < 1 || shape_.channels < 1) {
      throw ShapeError("convolution operator: empty image shape");
    }
  }

  static BasicConvolutionOperator identity(ImageShape shape) {
    return BasicConvolutionOperator(BasicKernel<Scalar>::delta(), shape);
  }

  const BasicKernel<Scalar>& kernel() const noexcept { return kernel_; }
  const ImageShape& shape() const noexcept { return shape_; }

  ImageT apply(const ImageT& x) const { return correlate(x, -1, "apply"); }
  ImageT adjoint(const ImageT& y) const { return correlate(y, +1, "adjoint"); }

  /// A^T 1, the per-pixel sensitivity used by Richardson-Lucy.
  ImageT adjoint_of_ones() const {
    return adjoint(ImageT(shape_.height, shape_.width, shape_.channels, Scalar(1)));
  }

 private:
  // sign -1: out(r,c) += K(u,v) x(r - (u-ar), c - (v-ac)); sign +1 flips the offset.
  ImageT correlate(const ImageT& x, int sign, const char* what) const {
    if (shape_of(x) != shape_) throw ShapeError(std::string("convolution ") + what + ": shape mismatch");
    const int h = shape_.height, w = shape_.width;
    ImageT out(h, w, shape_.channels);
    const auto& K = kernel_.weights();
    std::vector<int> col_index(static_cast<std::size_t>(w));
    for (int ch = 0; ch < shape_.channels; ++ch) {
      const Scalar* src = x.array().data() + Eigen::Index(ch) * h * w;
      Scalar* dst = out.array().data() + Eigen::Index(ch) * h * w;
      for (int u = 0; u < K.rows(); ++u) {
        const int dr = sign * (u - kernel_.anchor_row());
        for (int v = 0; v < K.cols(); ++v) {
          const Scalar k = K(u, v);
          if (k == Scalar(0)) continue;
          const int dc = sign * (v - kernel_.anchor_col());
          for (int c = 0; c < w; ++c) col_index[std::size_t(c)] = wrap(c + dc, w);
          for (int r = 0; r < h; ++r) {
            const Scalar* row = src + Eigen::Index(wrap(r + dr, h)) * w;
            Scalar* orow = dst + Eigen::Index(r) * w;
            for (int c = 0; c < w; ++c) orow[c] += k * row[col_index[std::size_t(c)]];
          }
        }
      }
    }
    return out;
  }

  static int wrap(int i, int n) noexcept {
    i %= n;
    return i < 0 ? i + n : i;
  }

  BasicKernel<Scalar> kernel_;
  ImageShape shape_;
};

using ConvolutionOperator = BasicConvolutionOperator<double>;

}  // namespace deqmd
