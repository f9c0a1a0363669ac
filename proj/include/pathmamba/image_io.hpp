#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "pathmamba/error.hpp"
#include "pathmamba/mask.hpp"
#include "pathmamba/tensor.hpp"

namespace pathmamba {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {

inline void png_write(const std::string& path, std::uint32_t w, std::uint32_t h, std::uint32_t format,
                      const std::vector<std::uint8_t>& buf) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = w;
  img.height = h;
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path + ": " + img.message);
}

inline std::vector<std::uint8_t> png_read(const std::string& path, std::uint32_t format, std::uint32_t& w,
                                          std::uint32_t& h) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read PNG " + path + ": " + img.message);
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path + ": " + img.message);
  }
  w = img.width;
  h = img.height;
  return buf;
}

}  // namespace detail

/// Writes an [H, W, 3] image in [0, 1] as 8-bit RGB.
template <class T>
void write_rgb_png(const std::string& path, const Tensor<T>& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw DimensionError("write_rgb_png expects [H,W,3]");
  std::vector<std::uint8_t> buf(image.numel());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(static_cast<double>(image[i]));
  detail::png_write(path, static_cast<std::uint32_t>(image.dim(1)), static_cast<std::uint32_t>(image.dim(0)),
                    PNG_FORMAT_RGB, buf);
}

/// Reads any PNG as [H, W, 3] RGB in [0, 1].
template <class T = float>
Tensor<T> read_rgb_png(const std::string& path) {
  std::uint32_t w = 0, h = 0;
  const auto buf = detail::png_read(path, PNG_FORMAT_RGB, w, h);
  Tensor<T> out({h, w, 3}, T(0));
  for (std::size_t i = 0; i < buf.size(); ++i) out[i] = static_cast<T>(buf[i]) / T(255);
  return out;
}

/// Grayscale 0 / 255.
inline void write_mask_png(const std::string& path, const BinaryMask& m) {
  std::vector<std::uint8_t> buf(m.bits.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = m.bits[i] ? 255 : 0;
  detail::png_write(path, static_cast<std::uint32_t>(m.width), static_cast<std::uint32_t>(m.height),
                    PNG_FORMAT_GRAY, buf);
}

/// Pixels with gray value >= 128 are road.
inline BinaryMask read_mask_png(const std::string& path) {
  std::uint32_t w = 0, h = 0;
  const auto buf = detail::png_read(path, PNG_FORMAT_GRAY, w, h);
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) m.bits[i] = buf[i] >= 128;
  return m;
}

}  // namespace pathmamba
