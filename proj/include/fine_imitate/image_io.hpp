#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fine_imitate/tensor.hpp"

namespace fi::data {

/// 8-bit grayscale PNG <-> {W, H, 1} tensor with values in [0, 1]. Values are
/// rounded to the nearest k / 255 on write.
void write_png_gray(const std::filesystem::path& path, const numerics::Tensor& image);
numerics::Tensor read_png_gray(const std::filesystem::path& path);

/// Interleaved 8-bit RGB raster, row-major by image row.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // (y * width + x) * 3 + channel

  RgbImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}
  std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
};

RgbImage gray_to_rgb(const numerics::Tensor& image);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

}  // namespace fi::data
