#include "umbra/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace umbra::png {
namespace {

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void read_from_memory(png_structp png_ptr, png_bytep out, png_size_t length) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png_ptr));
  if (cursor->offset + length > cursor->bytes.size()) png_error(png_ptr, "truncated PNG stream");
  std::memcpy(out, cursor->bytes.data() + cursor->offset, length);
  cursor->offset += length;
}

void write_to_vector(png_structp png_ptr, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png_ptr));
  out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

void error_handler(png_structp png_ptr, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png_ptr));
  *text = message;
  png_longjmp(png_ptr, 1);
}

void warning_handler(png_structp, png_const_charp) {}

std::vector<std::uint8_t> encode_raw(const std::uint8_t* pixels, int height, int width, int channels) {
  std::string error;
  png_structp png_ptr = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, error_handler, warning_handler);
  if (!png_ptr) throw IoError("png: cannot create write struct");
  png_infop info_ptr = png_create_info_struct(png_ptr);
  std::vector<std::uint8_t> out;
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_write_struct(&png_ptr, &info_ptr);
    throw IoError("png encode: " + error);
  }
  png_set_write_fn(png_ptr, &out, write_to_vector, flush_noop);
  png_set_IHDR(png_ptr, info_ptr, width, height, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_sRGB(png_ptr, info_ptr, PNG_sRGB_INTENT_PERCEPTUAL);
  png_write_info(png_ptr, info_ptr);
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * width * channels);
  png_write_image(png_ptr, rows.data());
  png_write_end(png_ptr, nullptr);
  png_destroy_write_struct(&png_ptr, &info_ptr);
  return out;
}

struct Decoded {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;
};

Decoded decode_raw(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError("png decode: not a PNG stream");
  std::string error;
  png_structp png_ptr = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, error_handler, warning_handler);
  if (!png_ptr) throw IoError("png: cannot create read struct");
  png_infop info_ptr = png_create_info_struct(png_ptr);
  ReadCursor cursor{bytes, 0};
  Decoded out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);
    throw IoError("png decode: " + error);
  }
  png_set_read_fn(png_ptr, &cursor, read_from_memory);
  png_read_info(png_ptr, info_ptr);
  const auto color_type = png_get_color_type(png_ptr, info_ptr);
  const auto bit_depth = png_get_bit_depth(png_ptr, info_ptr);
  if (bit_depth == 16) png_set_strip_16(png_ptr);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_ptr);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png_ptr);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png_ptr);
  if (png_get_valid(png_ptr, info_ptr, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png_ptr), png_set_strip_alpha(png_ptr);
  png_read_update_info(png_ptr, info_ptr);
  out.width = static_cast<int>(png_get_image_width(png_ptr, info_ptr));
  out.height = static_cast<int>(png_get_image_height(png_ptr, info_ptr));
  out.channels = png_get_channels(png_ptr, info_ptr);
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y)
    rows[y] = out.pixels.data() + static_cast<std::size_t>(y) * out.width * out.channels;
  png_read_image(png_ptr, rows.data());
  png_read_end(png_ptr, nullptr);
  png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);
  if (out.channels != 1 && out.channels != 3) throw IoError("png decode: unsupported channel layout");
  return out;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spill(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode(const ImageRGB& image) {
  std::vector<std::uint8_t> pixels(image.values().size());
  std::transform(image.values().begin(), image.values().end(), pixels.begin(), quantize);
  return encode_raw(pixels.data(), image.height(), image.width(), 3);
}

std::vector<std::uint8_t> encode(const MaskGray& mask) {
  std::vector<std::uint8_t> pixels(mask.values().size());
  std::transform(mask.values().begin(), mask.values().end(), pixels.begin(), quantize);
  return encode_raw(pixels.data(), mask.height(), mask.width(), 1);
}

ImageRGB decode_rgb(std::span<const std::uint8_t> bytes) {
  const Decoded d = decode_raw(bytes);
  ImageRGB out(d.height, d.width);
  auto dst = out.values();
  for (std::size_t p = 0; p < out.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c)
      dst[p * 3 + c] = d.pixels[p * d.channels + (d.channels == 3 ? c : 0)] / 255.0f;
  return out;
}

MaskGray decode_gray(std::span<const std::uint8_t> bytes) {
  const Decoded d = decode_raw(bytes);
  MaskGray out(d.height, d.width);
  auto dst = out.values();
  for (std::size_t p = 0; p < out.pixel_count(); ++p) {
    if (d.channels == 1) {
      dst[p] = d.pixels[p] / 255.0f;
    } else {
      const double luma = 0.2126 * d.pixels[p * 3] + 0.7152 * d.pixels[p * 3 + 1] + 0.0722 * d.pixels[p * 3 + 2];
      dst[p] = static_cast<float>(std::lround(luma)) / 255.0f;
    }
  }
  return out;
}

void write(const std::filesystem::path& path, const ImageRGB& image) { spill(path, encode(image)); }
void write(const std::filesystem::path& path, const MaskGray& mask) { spill(path, encode(mask)); }
ImageRGB read_rgb(const std::filesystem::path& path) { return decode_rgb(slurp(path)); }
MaskGray read_gray(const std::filesystem::path& path) { return decode_gray(slurp(path)); }

}  // namespace umbra::png
