#pragma once

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <png.h>

#include "trajscope/errors.hpp"
#include "trajscope/raster.hpp"

namespace trajscope {

/// Channel value v in [0, 1] is stored as round(255 * v).
inline std::uint8_t to_byte(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<std::uint8_t>(std::lround(255.0f * c));
}

namespace detail {

struct PngBuffer {
  std::vector<std::uint8_t> bytes;
  std::size_t pos = 0;
};

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  buf->insert(buf->end(), data, data + len);
}

inline void png_flush_noop(png_structp) {}

inline void png_read_from_buffer(png_structp png, png_bytep out, png_size_t len) {
  auto* buf = static_cast<PngBuffer*>(png_get_io_ptr(png));
  if (buf->pos + len > buf->bytes.size()) png_error(png, "truncated PNG data");
  std::memcpy(out, buf->bytes.data() + buf->pos, len);
  buf->pos += len;
}

}  // namespace detail

/// Encodes an image as an 8-bit RGB PNG.
inline std::vector<std::uint8_t> encode_png(const GradientImage& img) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed for '" + img.id + "'");
  }
  png_set_write_fn(png, &out, detail::png_write_to_vector, detail::png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = to_byte(img.at(x, y, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline GradientImage decode_png(std::vector<std::uint8_t> bytes, std::string id) {
  detail::PngBuffer buf{std::move(bytes), 0};
  if (buf.bytes.size() < 8 || png_sig_cmp(buf.bytes.data(), 0, 8) != 0) {
    throw ValidationError("'" + id + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  GradientImage img;
  std::vector<std::uint8_t> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("corrupt PNG '" + id + "'");
  }
  png_set_read_fn(png, &buf, detail::png_read_from_buffer);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  img = GradientImage(std::move(id), w, h);
  row.resize(png_get_rowbytes(png, info));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(row[static_cast<std::size_t>(x) * 3 + c]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png(const std::filesystem::path& path, const GradientImage& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Reads an RGB PNG; the image id is the file stem.
inline GradientImage read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(std::move(bytes), path.stem().string());
}

/// Quantizes channels to the 8-bit grid used by PNG export.
inline GradientImage quantize(GradientImage img) {
  for (auto& v : img.rgb) v = static_cast<float>(to_byte(v)) / 255.0f;
  return img;
}

}  // namespace trajscope
