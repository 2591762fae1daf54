#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "umbra/raster.hpp"

namespace umbra::png {

/// 8-bit encoders: values are clamped to [0, 1] and rounded to the nearest of 256 levels.
std::vector<std::uint8_t> encode(const ImageRGB& image);
std::vector<std::uint8_t> encode(const MaskGray& mask);

/// Decoders accept any 8-bit PNG color type and convert to the requested layout
/// (gray is replicated to RGB; RGB is reduced to luma for masks).
ImageRGB decode_rgb(std::span<const std::uint8_t> bytes);
MaskGray decode_gray(std::span<const std::uint8_t> bytes);

void write(const std::filesystem::path& path, const ImageRGB& image);
void write(const std::filesystem::path& path, const MaskGray& mask);
ImageRGB read_rgb(const std::filesystem::path& path);
MaskGray read_gray(const std::filesystem::path& path);

}  // namespace umbra::png
