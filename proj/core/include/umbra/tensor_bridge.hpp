#pragma once

#include <vector>

#include <torch/types.h>

#include "umbra/raster.hpp"

/// Conversions between HWC rasters and CHW float tensors.
namespace umbra::tensor {

/// [C, H, W] float32 copy of the raster.
template <int C>
torch::Tensor from_raster(const Raster<C>& r);

/// Stacks rasters of equal shape into [N, C, H, W].
template <int C>
torch::Tensor stack(const std::vector<Raster<C>>& rs);

/// Accepts [C, H, W] or [1, C, H, W]; values are copied as float and not clamped.
ImageRGB to_image(const torch::Tensor& t);
MaskGray to_mask(const torch::Tensor& t);

/// Bilinear resize of an [N, C, H, W] tensor (half-pixel centres).
torch::Tensor resize(const torch::Tensor& x, int height, int width);

extern template torch::Tensor from_raster<1>(const Raster<1>&);
extern template torch::Tensor from_raster<3>(const Raster<3>&);
extern template torch::Tensor stack<1>(const std::vector<Raster<1>>&);
extern template torch::Tensor stack<3>(const std::vector<Raster<3>>&);

}  // namespace umbra::tensor
