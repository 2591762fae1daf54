#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "umbra/errors.hpp"

namespace umbra {

/// Dense H x W x C raster of floats in row-major, channel-interleaved order.
/// Coordinates are integer pixels, origin top-left, x rightward, y downward.
template <int C>
class Raster {
 public:
  static constexpr int kChannels = C;

  Raster() = default;
  Raster(int height, int width, float fill = 0.0f)
      : height_(height), width_(width), data_(checked_size(height, width), fill) {}

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(int y, int x, int c = 0) noexcept {
    assert(y >= 0 && y < height_ && x >= 0 && x < width_ && c >= 0 && c < C);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * C + c];
  }
  float operator()(int y, int x, int c = 0) const noexcept {
    assert(y >= 0 && y < height_ && x >= 0 && x < width_ && c >= 0 && c < C);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * C + c];
  }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  bool same_shape(const Raster& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  static std::size_t checked_size(int h, int w) {
    if (h <= 0 || w <= 0) throw InvalidArgument("raster dimensions must be positive");
    return static_cast<std::size_t>(h) * w * C;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// sRGB image with values in [0, 1].
using ImageRGB = Raster<3>;
/// Single-channel mask with values in [0, 1].
using MaskGray = Raster<1>;

template <int A, int B>
void require_same_shape(const Raster<A>& a, const Raster<B>& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width())
    throw InvalidArgument(std::string(what) + ": raster shape mismatch");
}

/// True when every sample is finite and inside [0, 1].
template <int C>
bool in_unit_range(const Raster<C>& r) {
  return std::all_of(r.values().begin(), r.values().end(),
                     [](float v) { return v >= 0.0f && v <= 1.0f; });
}

template <int C>
void clamp_unit(Raster<C>& r) {
  for (float& v : r.values()) v = std::clamp(v, 0.0f, 1.0f);
}

template <int C>
Raster<C> flip_x(const Raster<C>& r) {
  Raster<C> out(r.height(), r.width());
  for (int y = 0; y < r.height(); ++y)
    for (int x = 0; x < r.width(); ++x)
      for (int c = 0; c < C; ++c) out(y, r.width() - 1 - x, c) = r(y, x, c);
  return out;
}

/// Integer translation; uncovered pixels take `fill`.
template <int C>
Raster<C> shift(const Raster<C>& r, int dx, int dy, float fill = 0.0f) {
  Raster<C> out(r.height(), r.width(), fill);
  for (int y = 0; y < r.height(); ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= r.height()) continue;
    for (int x = 0; x < r.width(); ++x) {
      const int sx = x - dx;
      if (sx < 0 || sx >= r.width()) continue;
      for (int c = 0; c < C; ++c) out(y, x, c) = r(sy, sx, c);
    }
  }
  return out;
}

MaskGray binarize(const MaskGray& m, float threshold = 0.5f);
std::size_t count_above(const MaskGray& m, float threshold = 0.5f);
bool is_all_zero(const MaskGray& m);
/// Pixelwise maximum of the masks; all inputs must share a shape.
MaskGray union_max(std::span<const MaskGray> masks, int height, int width);
/// Square-neighbourhood dilation of the binarized mask by `radius` pixels.
MaskGray dilate(const MaskGray& m, int radius);
/// Separable Gaussian blur with zero padding outside the frame.
MaskGray gaussian_blur(const MaskGray& m, double sigma);

/// Bilinear resampling with half-pixel centers (align_corners = false).
template <int C>
Raster<C> resize_bilinear(const Raster<C>& r, int height, int width);
/// Box-filter downscale by an integer factor.
template <int C>
Raster<C> downscale_area(const Raster<C>& r, int factor);

/// Copies `src` into `dst` where `mask` > 0.5.
void paste_where(ImageRGB& dst, const ImageRGB& src, const MaskGray& mask);

extern template Raster<1> resize_bilinear<1>(const Raster<1>&, int, int);
extern template Raster<3> resize_bilinear<3>(const Raster<3>&, int, int);
extern template Raster<1> downscale_area<1>(const Raster<1>&, int);
extern template Raster<3> downscale_area<3>(const Raster<3>&, int);

}  // namespace umbra
