#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>

#include "deqmd/errors.hpp"

namespace deqmd {

/// Dense multi-channel pixel grid. Storage is channel-planar and row-major
/// inside each plane: index = (channel * height + row) * width + col.
template <typename Scalar>
class BasicImage {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  BasicImage() = default;

  BasicImage(int height, int width, int channels = 1, Scalar fill = Scalar(0))
      : height_(height), width_(width), channels_(channels) {
    check_dims();
    data_ = Array::Constant(Eigen::Index(height) * width * channels, fill);
  }

  BasicImage(int height, int width, int channels, Array data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check_dims();
    if (data_.size() != Eigen::Index(height) * width * channels) {
      throw ShapeError("image data length does not match height*width*channels");
    }
  }

  static BasicImage constant(int height, int width, Scalar value, int channels = 1) {
    return BasicImage(height, width, channels, value);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  int plane_size() const noexcept { return height_ * width_; }
  Eigen::Index size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.size() == 0; }

  const Array& array() const noexcept { return data_; }
  Array& array() noexcept { return data_; }

  Scalar& operator()(int row, int col, int channel = 0) {
    return data_[index(row, col, channel)];
  }
  Scalar operator()(int row, int col, int channel = 0) const {
    return data_[index(row, col, channel)];
  }

  Eigen::Index index(int row, int col, int channel = 0) const noexcept {
    return (Eigen::Index(channel) * height_ + row) * width_ + col;
  }

  bool same_shape(const BasicImage& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  /// New image sharing this shape with the given data.
  BasicImage with_data(Array data) const {
    return BasicImage(height_, width_, channels_, std::move(data));
  }

  BasicImage channel(int c) const {
    return BasicImage(height_, width_, 1, data_.segment(Eigen::Index(c) * plane_size(), plane_size()));
  }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  void check_dims() const {
    if (height_ < 0 || width_ < 0 || channels_ < 0) throw ShapeError("negative image dimension");
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  Array data_;
};

using Image = BasicImage<double>;

template <typename Scalar>
void require_same_shape(const BasicImage<Scalar>& a, const BasicImage<Scalar>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                     std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                     std::to_string(b.channels()) + ")");
  }
}

template <typename Scalar>
Scalar dot(const BasicImage<Scalar>& a, const BasicImage<Scalar>& b) {
  require_same_shape(a, b, "dot");
  return (a.array() * b.array()).sum();
}

template <typename Scalar>
Scalar norm2(const BasicImage<Scalar>& a) {
  return std::sqrt(a.array().square().sum());
}

/// Floor every pixel at eps. Throws DomainError on NaN/Inf input.
template <typename Scalar>
BasicImage<Scalar> clamp_positive(const BasicImage<Scalar>& x, Scalar eps) {
  if (!(eps > Scalar(0))) throw DomainError("clamp_positive: eps must be > 0");
  if (!x.all_finite()) throw DomainError("clamp_positive: non-finite pixel (corrupted data)");
  return x.with_data(x.array().max(eps));
}

/// Positivity floor used wherever a strictly positive iterate is required.
inline constexpr double kPositivityFloor = 1e-8;

}  // namespace deqmd
