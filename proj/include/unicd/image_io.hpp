#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "unicd/tensor.hpp"

namespace unicd {

// 8-bit interleaved raster. Palette PNGs are returned as raw indices
// (channels == 1, palette == true).
struct RawImage {
  int64_t width = 0;
  int64_t height = 0;
  int channels = 0;
  bool palette = false;
  std::vector<uint8_t> pixels;

  uint8_t at(int64_t y, int64_t x, int c = 0) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
};

RawImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& img);

// Colour image as [C, H, W] in [0, 1]; grey inputs stay single-channel, alpha is dropped.
Tensor png_to_tensor(const RawImage& img);
// Single-channel [H, W] of raw byte values.
Tensor png_to_plane(const RawImage& img);

// [C, H, W] in [0, 1] -> 8-bit, rounding to nearest.
RawImage tensor_to_png(const Tensor& chw);
// [H, W] in [0, 1] -> 8-bit grey.
RawImage plane_to_png(const Tensor& hw);

}  // namespace unicd
