#include "umbra/raster.hpp"

#include <cmath>

namespace umbra {

MaskGray binarize(const MaskGray& m, float threshold) {
  MaskGray out(m.height(), m.width());
  auto src = m.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > threshold ? 1.0f : 0.0f;
  return out;
}

std::size_t count_above(const MaskGray& m, float threshold) {
  return static_cast<std::size_t>(
      std::count_if(m.values().begin(), m.values().end(), [&](float v) { return v > threshold; }));
}

bool is_all_zero(const MaskGray& m) {
  return std::all_of(m.values().begin(), m.values().end(), [](float v) { return v == 0.0f; });
}

MaskGray union_max(std::span<const MaskGray> masks, int height, int width) {
  MaskGray out(height, width);
  for (const auto& m : masks) {
    require_same_shape(out, m, "union_max");
    auto src = m.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::max(dst[i], src[i]);
  }
  return out;
}

MaskGray dilate(const MaskGray& m, int radius) {
  MaskGray bin = binarize(m);
  if (radius <= 0) return bin;
  const int h = m.height(), w = m.width();
  // Separable max filter: rows then columns.
  MaskGray rows(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float v = 0.0f;
      for (int k = std::max(0, x - radius); k <= std::min(w - 1, x + radius) && v == 0.0f; ++k)
        v = std::max(v, bin(y, k));
      rows(y, x) = v;
    }
  MaskGray out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float v = 0.0f;
      for (int k = std::max(0, y - radius); k <= std::min(h - 1, y + radius) && v == 0.0f; ++k)
        v = std::max(v, rows(k, x));
      out(y, x) = v;
    }
  return out;
}

MaskGray gaussian_blur(const MaskGray& m, double sigma) {
  if (sigma <= 0.0) return m;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& k : kernel) k /= total;

  const int h = m.height(), w = m.width();
  std::vector<double> tmp(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int sx = x + i;
        if (sx >= 0 && sx < w) acc += kernel[i + radius] * m(y, sx);
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  MaskGray out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int sy = y + i;
        if (sy >= 0 && sy < h) acc += kernel[i + radius] * tmp[static_cast<std::size_t>(sy) * w + x];
      }
      out(y, x) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
    }
  return out;
}

template <int C>
Raster<C> resize_bilinear(const Raster<C>& r, int height, int width) {
  if (height == r.height() && width == r.width()) return r;
  Raster<C> out(height, width);
  const double sy = static_cast<double>(r.height()) / height;
  const double sx = static_cast<double>(r.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(r.height() - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, r.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(r.width() - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, r.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < C; ++c) {
        const double top = (1 - wx) * r(y0, x0, c) + wx * r(y0, x1, c);
        const double bottom = (1 - wx) * r(y1, x0, c) + wx * r(y1, x1, c);
        out(y, x, c) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

template <int C>
Raster<C> downscale_area(const Raster<C>& r, int factor) {
  if (factor <= 0 || r.height() % factor != 0 || r.width() % factor != 0)
    throw InvalidArgument("downscale_area: factor must divide both dimensions");
  if (factor == 1) return r;
  Raster<C> out(r.height() / factor, r.width() / factor);
  const double norm = 1.0 / (factor * factor);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int j = 0; j < factor; ++j)
          for (int i = 0; i < factor; ++i) acc += r(y * factor + j, x * factor + i, c);
        out(y, x, c) = static_cast<float>(acc * norm);
      }
  return out;
}

template Raster<1> resize_bilinear<1>(const Raster<1>&, int, int);
template Raster<3> resize_bilinear<3>(const Raster<3>&, int, int);
template Raster<1> downscale_area<1>(const Raster<1>&, int);
template Raster<3> downscale_area<3>(const Raster<3>&, int);

void paste_where(ImageRGB& dst, const ImageRGB& src, const MaskGray& mask) {
  require_same_shape(dst, src, "paste_where");
  require_same_shape(dst, mask, "paste_where");
  for (int y = 0; y < dst.height(); ++y)
    for (int x = 0; x < dst.width(); ++x)
      if (mask(y, x) > 0.5f)
        for (int c = 0; c < 3; ++c) dst(y, x, c) = src(y, x, c);
}

}  // namespace umbra
